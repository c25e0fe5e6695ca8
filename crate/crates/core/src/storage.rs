//! Persistent warehouse store.
//!
//! Layout under the warehouse root:
//!
//! ```text
//! manifest.json            schema digest, per-file SHA-256, counters
//! schema.json              the schema document
//! dim_<table>.ndjson       one DimensionMember per line, key order
//! fact_<fact>.ndjson       one FactRow per line, append-only
//! lineage.ndjson           one LineageRecord per line, append-only
//! .lock                    present while a writer holds the warehouse
//! ```
//!
//! Mutations happen in memory and reach disk at [`Warehouse::checkpoint`].
//! Fact and lineage files are only ever appended to.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metadata::LineageRecord;
use crate::model::{self, DimensionLayout, LookupTableDef, SchemaDef, SchemaLayout, ValueKind};
use crate::numeric::CalendarDate;

pub const UNKNOWN: &str = "UNKNOWN";
pub const INFERRED: &str = "INFERRED";
pub const UNKNOWN_KEY: u64 = 0;

const MANIFEST: &str = "manifest.json";
const SCHEMA_FILE: &str = "schema.json";
const LINEAGE_FILE: &str = "lineage.ndjson";
const LOCK_FILE: &str = ".lock";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is not empty")]
    PathNotEmpty(PathBuf),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("table `{table}` requires attribute `{attribute}`")]
    MissingAttribute { table: String, attribute: String },
    #[error("table `{table}` has no attribute `{attribute}`")]
    UnknownAttribute { table: String, attribute: String },
    #[error("value `{value}` for `{table}.{attribute}` is not a valid {kind}")]
    InvalidValue { table: String, attribute: String, value: String, kind: ValueKind },
    #[error("natural key `{0}` is reserved")]
    ReservedKey(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("unknown level `{level}` in dimension `{dimension}`")]
    UnknownLevel { dimension: String, level: String },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("digest mismatch for {0}")]
    DigestMismatch(String),
    #[error("warehouse is locked by another writer ({0})")]
    WarehouseLocked(PathBuf),
    #[error("warehouse is open read-only")]
    ReadOnly,
}

pub type Result<T, E = StorageError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionMember {
    pub surrogate_key: u64,
    pub natural_key: String,
    pub attributes: BTreeMap<String, String>,
    /// Surrogate keys into the outer tables hanging off this one.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub refs: BTreeMap<String, u64>,
    #[serde(default)]
    pub inferred: bool,
}

/// A stored fact: one base-member surrogate key per fact dimension, the
/// degenerate key values and the measure values, all in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FactRow {
    pub keys: Vec<u64>,
    pub degenerate: Vec<String>,
    pub measures: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FactRejection {
    #[error("dimension `{dimension}` has no member with key {key}")]
    ForeignKeyViolation { dimension: String, key: u64 },
    #[error("measure `{measure}` value {value} is below its minimum {min}")]
    DomainViolation { measure: String, value: i64, min: i64 },
    #[error("row shape does not match the fact table")]
    ShapeMismatch,
    #[error("degenerate key `{name}` value `{value}` is not a valid {kind}")]
    InvalidValue { name: String, value: String, kind: ValueKind },
}

impl FactRejection {
    pub fn code(&self) -> &'static str {
        match self {
            FactRejection::ForeignKeyViolation { .. } => "ForeignKeyViolation",
            FactRejection::DomainViolation { .. } => "DomainViolation",
            FactRejection::ShapeMismatch => "ShapeMismatch",
            FactRejection::InvalidValue { .. } => "InvalidValue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppendOutcome {
    pub accepted: usize,
    pub outcomes: Vec<Result<(), FactRejection>>,
}

#[derive(Debug, Clone)]
pub struct DimensionTable {
    pub def: LookupTableDef,
    /// Child tables (outer lookups) referenced from each row.
    pub children: Vec<String>,
    rows: Vec<DimensionMember>,
    by_natural_key: HashMap<String, u64>,
}

impl DimensionTable {
    fn new(def: LookupTableDef, children: Vec<String>) -> Self {
        let unknown = DimensionMember {
            surrogate_key: UNKNOWN_KEY,
            natural_key: UNKNOWN.into(),
            attributes: def.attributes.iter().map(|a| (a.name.clone(), UNKNOWN.to_string())).collect(),
            refs: children.iter().map(|c| (c.clone(), UNKNOWN_KEY)).collect(),
            inferred: false,
        };
        DimensionTable { def, children, rows: vec![unknown], by_natural_key: HashMap::new() }
    }

    pub fn rows(&self) -> &[DimensionMember] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn next_key(&self) -> u64 {
        self.rows.len() as u64
    }

    pub fn get(&self, key: u64) -> Option<&DimensionMember> {
        self.rows.get(key as usize)
    }

    pub fn lookup(&self, natural_key: &str) -> Option<u64> {
        if natural_key == UNKNOWN {
            return Some(UNKNOWN_KEY);
        }
        self.by_natural_key.get(natural_key).copied()
    }

    fn is_calendar(&self) -> bool {
        self.def.natural_key_kind() == Some(ValueKind::Date)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    schema_digest: String,
    fact_count: u64,
    lineage_count: u64,
    counters: BTreeMap<String, u64>,
    files: BTreeMap<String, String>,
    /// SHA-256 of this manifest serialized with an empty `self_digest`.
    #[serde(default)]
    self_digest: String,
}

impl Manifest {
    fn body_digest(&self) -> String {
        let blank = Manifest { self_digest: String::new(), ..self.clone() };
        sha256_hex(&serde_json::to_vec_pretty(&blank).expect("manifest serializes"))
    }
}

/// Removes the lock file when dropped.
#[derive(Debug)]
struct WriterLock {
    path: PathBuf,
}

impl WriterLock {
    fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WriterLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(StorageError::WarehouseLocked(path)),
            Err(e) => Err(StorageError::Io { path, source: e }),
        }
    }
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Append-only byte log with a running digest.
#[derive(Debug, Clone, Default)]
struct AppendLog {
    hasher: Sha256,
    bytes: u64,
}

impl AppendLog {
    fn update(&mut self, data: &[u8]) {
        self.hasher.update(data);
        self.bytes += data.len() as u64;
    }

    fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

#[derive(Debug)]
pub struct Warehouse {
    schema: SchemaDef,
    layout: SchemaLayout,
    root: Option<PathBuf>,
    tables: BTreeMap<String, DimensionTable>,
    facts: Vec<FactRow>,
    persisted_facts: usize,
    fact_log: AppendLog,
    pub(crate) lineage: Vec<LineageRecord>,
    persisted_lineage: usize,
    lineage_log: AppendLog,
    checkpoint_digest: Option<String>,
    dirty: bool,
    writable: bool,
    _lock: Option<WriterLock>,
}

impl Warehouse {
    fn empty(schema: SchemaDef) -> Result<Self> {
        let layout = SchemaLayout::new(&schema).map_err(|e| StorageError::InvalidSchema(e.to_string()))?;
        let mut tables = BTreeMap::new();
        for dim in &schema.dimensions {
            for t in &dim.tables {
                let children = dim.children_of(&t.name).map(|c| c.name.clone()).collect();
                tables.insert(t.name.clone(), DimensionTable::new(t.clone(), children));
            }
        }
        Ok(Warehouse {
            schema,
            layout,
            root: None,
            tables,
            facts: Vec::new(),
            persisted_facts: 0,
            fact_log: AppendLog::default(),
            lineage: Vec::new(),
            persisted_lineage: 0,
            lineage_log: AppendLog::default(),
            checkpoint_digest: None,
            dirty: true,
            writable: true,
            _lock: None,
        })
    }

    /// A writable warehouse that lives only in memory; `checkpoint` computes
    /// digests without touching disk.
    pub fn in_memory(schema: SchemaDef) -> Result<Self> {
        Self::empty(schema)
    }

    pub fn schema(&self) -> &SchemaDef {
        &self.schema
    }

    pub fn layout(&self) -> &SchemaLayout {
        &self.layout
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn table(&self, name: &str) -> Option<&DimensionTable> {
        self.tables.get(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = &DimensionTable> {
        self.tables.values()
    }

    pub fn facts(&self) -> &[FactRow] {
        &self.facts
    }

    pub fn fact_count(&self) -> usize {
        self.facts.len()
    }

    pub fn lineage(&self) -> &[LineageRecord] {
        &self.lineage
    }

    /// Digest of the manifest written by the last checkpoint.
    pub fn checkpoint_digest(&self) -> Option<&str> {
        self.checkpoint_digest.as_deref()
    }

    /// True when state changed since the last checkpoint.
    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn is_writable(&self) -> bool {
        self.writable
    }

    pub(crate) fn ensure_writable(&mut self) -> Result<()> {
        if !self.writable {
            return Err(StorageError::ReadOnly);
        }
        self.dirty = true;
        Ok(())
    }

    fn table_mut(&mut self, name: &str) -> Result<&mut DimensionTable> {
        self.tables.get_mut(name).ok_or_else(|| StorageError::UnknownTable(name.into()))
    }

    /// Inserts or type-1 updates a member. `refs` maps outer table names to
    /// natural keys; absent outer members are created as inferred.
    pub fn upsert_dimension_member(
        &mut self,
        table: &str,
        natural_key: &str,
        attributes: &BTreeMap<String, String>,
        refs: &BTreeMap<String, String>,
    ) -> Result<u64> {
        self.upsert_member_counted(table, natural_key, attributes, refs).map(|(k, _)| k)
    }

    /// As [`upsert_dimension_member`](Self::upsert_dimension_member), also
    /// returning how many inferred outer members were created.
    pub fn upsert_member_counted(
        &mut self,
        table: &str,
        natural_key: &str,
        attributes: &BTreeMap<String, String>,
        refs: &BTreeMap<String, String>,
    ) -> Result<(u64, usize)> {
        let t = self.tables.get(table).ok_or_else(|| StorageError::UnknownTable(table.into()))?;
        if natural_key == UNKNOWN {
            return Err(StorageError::ReservedKey(natural_key.into()));
        }
        let mut attrs = BTreeMap::new();
        for a in &t.def.attributes {
            let value = if a.name == t.def.natural_key {
                natural_key
            } else {
                attributes.get(&a.name).ok_or_else(|| StorageError::MissingAttribute {
                    table: table.into(),
                    attribute: a.name.clone(),
                })?
            };
            if value != UNKNOWN && value != INFERRED && !model::check_value(a.kind, value) {
                return Err(StorageError::InvalidValue {
                    table: table.into(),
                    attribute: a.name.clone(),
                    value: value.into(),
                    kind: a.kind,
                });
            }
            attrs.insert(a.name.clone(), value.to_string());
        }
        if let Some(extra) = attributes.keys().find(|k| t.def.attribute(k).is_none()) {
            return Err(StorageError::UnknownAttribute { table: table.into(), attribute: extra.clone() });
        }
        if let Some(extra) = refs.keys().find(|k| !t.children.contains(k)) {
            return Err(StorageError::UnknownTable(extra.clone()));
        }
        let children = t.children.clone();
        self.ensure_writable()?;

        let mut inferred = 0;
        let mut resolved = BTreeMap::new();
        for child in &children {
            if let Some(nk) = refs.get(child) {
                let (k, n) = self.resolve_member(child, nk, true)?;
                inferred += n;
                resolved.insert(child.clone(), k);
            }
        }

        let t = self.table_mut(table)?;
        let key = match t.by_natural_key.get(natural_key) {
            Some(&k) => {
                let row = &mut t.rows[k as usize];
                row.attributes = attrs;
                row.refs.extend(resolved);
                row.inferred = false;
                k
            }
            None => {
                let k = t.next_key();
                let mut member_refs: BTreeMap<String, u64> = children.iter().map(|c| (c.clone(), UNKNOWN_KEY)).collect();
                member_refs.extend(resolved);
                t.rows.push(DimensionMember {
                    surrogate_key: k,
                    natural_key: natural_key.into(),
                    attributes: attrs,
                    refs: member_refs,
                    inferred: false,
                });
                t.by_natural_key.insert(natural_key.into(), k);
                k
            }
        };
        Ok((key, inferred))
    }

    /// Maps a natural key to a surrogate key. Missing calendar members are
    /// derived from the date; other missing members become inferred rows when
    /// `infer` is set and the Unknown member otherwise. Returns the key and
    /// the number of inferred rows created.
    pub fn resolve_member(&mut self, table: &str, natural_key: &str, infer: bool) -> Result<(u64, usize)> {
        let t = self.tables.get(table).ok_or_else(|| StorageError::UnknownTable(table.into()))?;
        if let Some(k) = t.lookup(natural_key) {
            return Ok((k, 0));
        }
        if t.is_calendar() {
            if let Some(date) = CalendarDate::parse_compact(natural_key) {
                let attrs = calendar_attributes(&t.def, &date);
                return self.upsert_member_counted(table, natural_key, &attrs, &BTreeMap::new());
            }
            return Ok((UNKNOWN_KEY, 0));
        }
        if !infer {
            return Ok((UNKNOWN_KEY, 0));
        }
        self.ensure_writable()?;
        let t = self.table_mut(table)?;
        let k = t.next_key();
        let attributes = t
            .def
            .attributes
            .iter()
            .map(|a| {
                let v = if a.name == t.def.natural_key { natural_key } else { INFERRED };
                (a.name.clone(), v.to_string())
            })
            .collect();
        let refs = t.children.iter().map(|c| (c.clone(), UNKNOWN_KEY)).collect();
        t.rows.push(DimensionMember { surrogate_key: k, natural_key: natural_key.into(), attributes, refs, inferred: true });
        t.by_natural_key.insert(natural_key.into(), k);
        Ok((k, 1))
    }

    /// Appends each row independently; rejected rows leave no trace.
    pub fn append_facts(&mut self, rows: Vec<FactRow>) -> Result<AppendOutcome> {
        self.ensure_writable()?;
        let mut outcomes = Vec::with_capacity(rows.len());
        let mut accepted = 0;
        for row in rows {
            match self.check_fact(&row) {
                Ok(()) => {
                    self.facts.push(row);
                    accepted += 1;
                    outcomes.push(Ok(()));
                }
                Err(e) => outcomes.push(Err(e)),
            }
        }
        Ok(AppendOutcome { accepted, outcomes })
    }

    fn check_fact(&self, row: &FactRow) -> Result<(), FactRejection> {
        let fact = &self.schema.fact;
        if row.keys.len() != self.layout.dimensions.len()
            || row.degenerate.len() != fact.degenerate_keys.len()
            || row.measures.len() != fact.measures.len()
        {
            return Err(FactRejection::ShapeMismatch);
        }
        for (dim, &key) in self.layout.dimensions.iter().zip(&row.keys) {
            let t = &self.tables[&dim.base_table];
            if t.get(key).is_none() {
                return Err(FactRejection::ForeignKeyViolation { dimension: dim.name.clone(), key });
            }
        }
        for (k, v) in fact.degenerate_keys.iter().zip(&row.degenerate) {
            if !model::check_value(k.kind, v) {
                return Err(FactRejection::InvalidValue { name: k.name.clone(), value: v.clone(), kind: k.kind });
            }
        }
        for (m, &v) in fact.measures.iter().zip(&row.measures) {
            if v < m.min {
                return Err(FactRejection::DomainViolation { measure: m.name.clone(), value: v, min: m.min });
            }
        }
        Ok(())
    }

    /// Resolves every hierarchy level value for every member of every fact
    /// dimension's base table.
    pub fn joined_dimensions(&self) -> JoinedDimensions {
        let dims = self
            .layout
            .dimensions
            .iter()
            .map(|d| {
                let base = &self.tables[&d.base_table];
                base.rows.iter().map(|m| self.member_levels(d, m)).collect()
            })
            .collect();
        JoinedDimensions { dims }
    }

    fn member_levels(&self, dim: &DimensionLayout, member: &DimensionMember) -> Vec<String> {
        dim.levels
            .iter()
            .map(|level| {
                let mut cur = member;
                for pair in level.path.windows(2) {
                    let key = cur.refs.get(&pair[1]).copied().unwrap_or(UNKNOWN_KEY);
                    cur = self.tables[&pair[1]].get(key).expect("referential integrity");
                }
                cur.attributes.get(&level.attribute).cloned().unwrap_or_else(|| UNKNOWN.into())
            })
            .collect()
    }

    pub fn resolve_filters(&self, filters: &[LevelFilter]) -> Result<Vec<ResolvedFilter>> {
        filters
            .iter()
            .map(|f| {
                let d = self
                    .layout
                    .dimension_index(&f.dimension)
                    .ok_or_else(|| StorageError::UnknownDimension(f.dimension.clone()))?;
                let l = self.layout.dimensions[d].level_index(&f.level).ok_or_else(|| StorageError::UnknownLevel {
                    dimension: f.dimension.clone(),
                    level: f.level.clone(),
                })?;
                Ok(ResolvedFilter { dimension: d, level: l, values: f.values.clone() })
            })
            .collect()
    }

    /// Every fact satisfying all filters, joined through its snowflake chains,
    /// in insertion order.
    pub fn scan_facts(&self, filters: &[LevelFilter]) -> Result<FactScan<'_>> {
        let filters = self.resolve_filters(filters)?;
        Ok(FactScan { wh: self, joined: self.joined_dimensions(), filters })
    }

    fn table_file(name: &str) -> String {
        format!("dim_{name}.ndjson")
    }

    fn fact_file(&self) -> String {
        format!("fact_{}.ndjson", self.schema.fact.name)
    }

    fn fact_line(&self, row: &FactRow) -> Vec<u8> {
        let fact = &self.schema.fact;
        let mut obj = serde_json::Map::new();
        for (d, k) in fact.dimension_refs.iter().zip(&row.keys) {
            obj.insert(d.clone(), (*k).into());
        }
        for (d, v) in fact.degenerate_keys.iter().zip(&row.degenerate) {
            obj.insert(d.name.clone(), v.clone().into());
        }
        for (m, v) in fact.measures.iter().zip(&row.measures) {
            obj.insert(m.name.clone(), (*v).into());
        }
        let mut line = serde_json::to_vec(&obj).expect("fact serializes");
        line.push(b'\n');
        line
    }

    fn parse_fact_line(&self, line: &str) -> Result<FactRow> {
        let corrupt = |m: &str| StorageError::CorruptManifest(format!("fact record: {m}"));
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(line).map_err(|e| corrupt(&e.to_string()))?;
        let fact = &self.schema.fact;
        let keys = fact
            .dimension_refs
            .iter()
            .map(|d| obj.get(d).and_then(|v| v.as_u64()).ok_or_else(|| corrupt(d)))
            .collect::<Result<_>>()?;
        let degenerate = fact
            .degenerate_keys
            .iter()
            .map(|k| obj.get(&k.name).and_then(|v| v.as_str()).map(String::from).ok_or_else(|| corrupt(&k.name)))
            .collect::<Result<_>>()?;
        let measures = fact
            .measures
            .iter()
            .map(|m| obj.get(&m.name).and_then(|v| v.as_i64()).ok_or_else(|| corrupt(&m.name)))
            .collect::<Result<_>>()?;
        Ok(FactRow { keys, degenerate, measures })
    }

    /// Flushes all tables and writes a fresh manifest. Returns the SHA-256 of
    /// the manifest bytes, which identifies this snapshot.
    pub fn checkpoint(&mut self) -> Result<String> {
        if !self.writable {
            return Err(StorageError::ReadOnly);
        }
        let mut files = BTreeMap::new();
        let mut counters = BTreeMap::new();

        let schema_text = model::schema_to_string(&self.schema);
        files.insert(SCHEMA_FILE.to_string(), sha256_hex(schema_text.as_bytes()));
        if let Some(root) = &self.root {
            write_atomic(&root.join(SCHEMA_FILE), schema_text.as_bytes())?;
        }

        for (name, t) in &self.tables {
            let mut buf = Vec::new();
            for row in &t.rows {
                serde_json::to_writer(&mut buf, row).expect("member serializes");
                buf.push(b'\n');
            }
            let file = Self::table_file(name);
            files.insert(file.clone(), sha256_hex(&buf));
            counters.insert(name.clone(), t.next_key());
            if let Some(root) = &self.root {
                write_atomic(&root.join(&file), &buf)?;
            }
        }

        let mut fact_buf = Vec::new();
        for row in &self.facts[self.persisted_facts..] {
            fact_buf.extend(self.fact_line(row));
        }
        let mut lineage_buf = Vec::new();
        for rec in &self.lineage[self.persisted_lineage..] {
            serde_json::to_writer(&mut lineage_buf, rec).expect("lineage serializes");
            lineage_buf.push(b'\n');
        }
        if let Some(root) = &self.root {
            append_file(&root.join(self.fact_file()), &fact_buf)?;
            append_file(&root.join(LINEAGE_FILE), &lineage_buf)?;
        }
        self.fact_log.update(&fact_buf);
        self.lineage_log.update(&lineage_buf);
        self.persisted_facts = self.facts.len();
        self.persisted_lineage = self.lineage.len();
        files.insert(self.fact_file(), self.fact_log.digest());
        files.insert(LINEAGE_FILE.to_string(), self.lineage_log.digest());

        let mut manifest = Manifest {
            format: FORMAT_VERSION,
            schema_digest: self.schema.digest(),
            fact_count: self.facts.len() as u64,
            lineage_count: self.lineage.len() as u64,
            counters,
            files,
            self_digest: String::new(),
        };
        manifest.self_digest = manifest.body_digest();
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        if let Some(root) = &self.root {
            write_atomic(&root.join(MANIFEST), &bytes)?;
        }
        let digest = sha256_hex(&bytes);
        self.checkpoint_digest = Some(digest.clone());
        self.dirty = false;
        Ok(digest)
    }

    /// Manifest digest of the warehouse currently on disk at `root`.
    pub fn manifest_digest(root: &Path) -> Result<String> {
        let path = root.join(MANIFEST);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        Ok(sha256_hex(&bytes))
    }
}

/// Creates a new warehouse at `root` and writes its first checkpoint. The
/// returned handle holds the writer lock.
pub fn init_warehouse(schema: SchemaDef, root: &Path) -> Result<Warehouse> {
    let report = model::validate_schema(&schema);
    if !report.valid() {
        let msgs: Vec<String> = report.errors().map(|i| format!("{} at {}", i.code, i.location)).collect();
        return Err(StorageError::InvalidSchema(msgs.join("; ")));
    }
    if root.exists() {
        let mut entries = fs::read_dir(root).map_err(io_err(root))?;
        if entries.next().is_some() {
            return Err(StorageError::PathNotEmpty(root.to_path_buf()));
        }
    }
    fs::create_dir_all(root).map_err(io_err(root))?;
    let lock = WriterLock::acquire(root)?;
    let mut wh = Warehouse::empty(schema)?;
    wh.root = Some(root.to_path_buf());
    wh._lock = Some(lock);
    wh.checkpoint()?;
    Ok(wh)
}

/// Opens the last checkpoint read-only, verifying every file digest.
pub fn open_warehouse(root: &Path) -> Result<Warehouse> {
    load(root, None)
}

/// Opens the last checkpoint for writing; fails fast if another writer holds
/// the lock.
pub fn open_warehouse_for_write(root: &Path) -> Result<Warehouse> {
    let manifest = root.join(MANIFEST);
    if !manifest.exists() {
        return Err(StorageError::Io {
            path: manifest,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no warehouse manifest"),
        });
    }
    let lock = WriterLock::acquire(root)?;
    load(root, Some(lock))
}

fn load(root: &Path, lock: Option<WriterLock>) -> Result<Warehouse> {
    let manifest_path = root.join(MANIFEST);
    let manifest_bytes = fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest_bytes).map_err(|e| StorageError::CorruptManifest(e.to_string()))?;
    if manifest.self_digest != manifest.body_digest() {
        return Err(StorageError::DigestMismatch(MANIFEST.into()));
    }
    if manifest.format != FORMAT_VERSION {
        return Err(StorageError::CorruptManifest(format!("unsupported format {}", manifest.format)));
    }

    let read_verified = |name: &str| -> Result<Vec<u8>> {
        let expected = manifest
            .files
            .get(name)
            .ok_or_else(|| StorageError::CorruptManifest(format!("no digest for {name}")))?;
        let path = root.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if &sha256_hex(&bytes) != expected {
            return Err(StorageError::DigestMismatch(name.into()));
        }
        Ok(bytes)
    };

    let schema_bytes = read_verified(SCHEMA_FILE)?;
    let schema_text = String::from_utf8(schema_bytes).map_err(|e| StorageError::CorruptManifest(e.to_string()))?;
    let schema = model::parse_schema(&schema_text).map_err(|e| StorageError::InvalidSchema(e.to_string()))?;
    if schema.digest() != manifest.schema_digest {
        return Err(StorageError::DigestMismatch(SCHEMA_FILE.into()));
    }
    let mut wh = Warehouse::empty(schema)?;

    let names: Vec<String> = wh.tables.keys().cloned().collect();
    for name in names {
        let file = Warehouse::table_file(&name);
        let bytes = read_verified(&file)?;
        let mut rows = Vec::new();
        for line in bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
            let m: DimensionMember = serde_json::from_slice(line)
                .map_err(|e| StorageError::CorruptManifest(format!("{file}: {e}")))?;
            if m.surrogate_key != rows.len() as u64 {
                return Err(StorageError::CorruptManifest(format!("{file}: surrogate keys not dense")));
            }
            rows.push(m);
        }
        if manifest.counters.get(&name) != Some(&(rows.len() as u64)) {
            return Err(StorageError::CorruptManifest(format!("counter mismatch for {name}")));
        }
        let t = wh.tables.get_mut(&name).expect("table exists");
        t.by_natural_key = rows.iter().skip(1).map(|m| (m.natural_key.clone(), m.surrogate_key)).collect();
        t.rows = rows;
    }

    let fact_file = wh.fact_file();
    let fact_bytes = read_verified(&fact_file)?;
    for line in BufReader::new(fact_bytes.as_slice()).lines() {
        let line = line.map_err(io_err(&root.join(&fact_file)))?;
        if line.is_empty() {
            continue;
        }
        let row = wh.parse_fact_line(&line)?;
        wh.facts.push(row);
    }
    if wh.facts.len() as u64 != manifest.fact_count {
        return Err(StorageError::CorruptManifest("fact count mismatch".into()));
    }
    wh.fact_log.update(&fact_bytes);

    let lineage_bytes = read_verified(LINEAGE_FILE)?;
    for line in lineage_bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
        let rec: LineageRecord =
            serde_json::from_slice(line).map_err(|e| StorageError::CorruptManifest(format!("lineage: {e}")))?;
        wh.lineage.push(rec);
    }
    if wh.lineage.len() as u64 != manifest.lineage_count {
        return Err(StorageError::CorruptManifest("lineage count mismatch".into()));
    }
    wh.lineage_log.update(&lineage_bytes);

    wh.persisted_facts = wh.facts.len();
    wh.persisted_lineage = wh.lineage.len();
    wh.root = Some(root.to_path_buf());
    wh.checkpoint_digest = Some(sha256_hex(&manifest_bytes));
    wh.dirty = false;
    wh.writable = lock.is_some();
    wh._lock = lock;
    Ok(wh)
}

/// Derived calendar attributes for a date-keyed lookup table. Attributes
/// named `day`, `month`, `quarter` and `year` are filled from the date; any
/// other attribute is left Unknown.
pub fn calendar_attributes(def: &LookupTableDef, date: &CalendarDate) -> BTreeMap<String, String> {
    def.attributes
        .iter()
        .filter(|a| a.name != def.natural_key)
        .map(|a| {
            let v = match a.name.as_str() {
                "day" | "date" => date.compact(),
                "month" => date.month_key(),
                "quarter" => date.quarter_key(),
                "year" => date.year_key(),
                _ => UNKNOWN.into(),
            };
            (a.name.clone(), v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelFilter {
    pub dimension: String,
    pub level: String,
    pub values: BTreeSet<String>,
}

impl LevelFilter {
    pub fn eq(dimension: &str, level: &str, value: &str) -> Self {
        LevelFilter {
            dimension: dimension.into(),
            level: level.into(),
            values: std::iter::once(value.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedFilter {
    pub dimension: usize,
    pub level: usize,
    pub values: BTreeSet<String>,
}

/// Level values per fact dimension (schema fact order), indexed by base
/// surrogate key, then level index.
#[derive(Debug, Clone)]
pub struct JoinedDimensions {
    pub dims: Vec<Vec<Vec<String>>>,
}

pub struct FactScan<'a> {
    wh: &'a Warehouse,
    joined: JoinedDimensions,
    filters: Vec<ResolvedFilter>,
}

#[derive(Debug, Clone, Copy)]
pub struct JoinedFact<'a> {
    pub row: &'a FactRow,
    joined: &'a JoinedDimensions,
}

impl<'a> JoinedFact<'a> {
    pub fn level(&self, dimension: usize, level: usize) -> &'a str {
        &self.joined.dims[dimension][self.row.keys[dimension] as usize][level]
    }
}

impl FactScan<'_> {
    pub fn iter(&self) -> impl Iterator<Item = JoinedFact<'_>> {
        let joined = &self.joined;
        let filters = &self.filters;
        self.wh.facts.iter().map(move |row| JoinedFact { row, joined }).filter(move |f| {
            filters.iter().all(|flt| flt.values.contains(f.level(flt.dimension, flt.level)))
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn append_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f: File = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_tcm_schema;

    fn attrs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn no_refs() -> BTreeMap<String, String> {
        BTreeMap::new()
    }

    #[test]
    fn unknown_member_present_from_creation() {
        let wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        for t in wh.tables() {
            assert_eq!(t.len(), 1);
            let u = t.get(0).unwrap();
            assert_eq!(u.natural_key, UNKNOWN);
            assert!(u.attributes.values().all(|v| v == UNKNOWN));
        }
    }

    #[test]
    fn upsert_assigns_dense_keys_and_is_idempotent() {
        let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        let a = attrs(&[("indication", "cold and flu")]);
        let k = wh.upsert_dimension_member("Formulas", "Ge Gen Tang", &a, &no_refs()).unwrap();
        assert_eq!(k, 1);
        let k2 = wh.upsert_dimension_member("Formulas", "Ge Gen Tang", &a, &no_refs()).unwrap();
        assert_eq!(k2, 1);
        assert_eq!(wh.table("Formulas").unwrap().len(), 2);
        let k3 = wh.upsert_dimension_member("Formulas", "Gui Zhi Tang", &a, &no_refs()).unwrap();
        assert_eq!(k3, 2);
    }

    #[test]
    fn upsert_errors() {
        let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        assert!(matches!(
            wh.upsert_dimension_member("Patients", "x", &attrs(&[]), &no_refs()),
            Err(StorageError::UnknownTable(_))
        ));
        assert!(matches!(
            wh.upsert_dimension_member("Formulas", "x", &attrs(&[]), &no_refs()),
            Err(StorageError::MissingAttribute { .. })
        ));
        assert!(matches!(
            wh.upsert_dimension_member("Formulas", UNKNOWN, &attrs(&[("indication", "x")]), &no_refs()),
            Err(StorageError::ReservedKey(_))
        ));
        assert!(matches!(
            wh.upsert_dimension_member("Dates", "20101345", &attrs(&[("month", "201013"), ("quarter", "x"), ("year", "2010")]), &no_refs()),
            Err(StorageError::InvalidValue { .. })
        ));
    }

    #[test]
    fn parent_reference_creates_inferred_member_that_enrichment_keeps() {
        let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        let refs = attrs(&[("FormulaTypes", "Exterior-releasing")]);
        let (_, inferred) =
            wh.upsert_member_counted("Formulas", "Ge Gen Tang", &attrs(&[("indication", "x")]), &refs).unwrap();
        assert_eq!(inferred, 1);
        let ft = wh.table("FormulaTypes").unwrap();
        let key = ft.lookup("Exterior-releasing").unwrap();
        assert!(ft.get(key).unwrap().inferred);
        let k2 = wh
            .upsert_dimension_member(
                "FormulaTypes",
                "Exterior-releasing",
                &attrs(&[("formula_type_description", "releases the exterior")]),
                &no_refs(),
            )
            .unwrap();
        assert_eq!(key, k2);
        assert!(!wh.table("FormulaTypes").unwrap().get(key).unwrap().inferred);
    }

    #[test]
    fn append_facts_checks_keys_and_domain() {
        let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        let (d, _) = wh.resolve_member("Dates", "20100315", false).unwrap();
        assert_eq!(d, 1);
        let good = FactRow { keys: vec![d, 0, 0, 0], degenerate: vec!["P1".into()], measures: vec![9000] };
        let bad_key = FactRow { keys: vec![d, 999, 0, 0], ..good.clone() };
        let bad_qty = FactRow { measures: vec![-5], ..good.clone() };
        let out = wh.append_facts(vec![good, bad_key, bad_qty]).unwrap();
        assert_eq!(out.accepted, 1);
        assert_eq!(wh.fact_count(), 1);
        assert!(matches!(out.outcomes[1], Err(FactRejection::ForeignKeyViolation { key: 999, .. })));
        assert!(matches!(out.outcomes[2], Err(FactRejection::DomainViolation { value: -5, .. })));
    }

    #[test]
    fn scan_filters_on_derived_calendar_levels() {
        let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        let (a, _) = wh.resolve_member("Dates", "20100315", false).unwrap();
        let (b, _) = wh.resolve_member("Dates", "20111101", false).unwrap();
        let rows = [a, b]
            .iter()
            .map(|&k| FactRow { keys: vec![k, 0, 0, 0], degenerate: vec!["P".into()], measures: vec![10] })
            .collect();
        wh.append_facts(rows).unwrap();
        let scan = wh.scan_facts(&[LevelFilter::eq("Date", "year", "2010")]).unwrap();
        let hits: Vec<_> = scan.iter().map(|f| f.level(0, 0).to_string()).collect();
        assert_eq!(hits, vec!["20100315"]);
        let err = wh.scan_facts(&[LevelFilter::eq("Source", "continent", "Asia")]).err().unwrap();
        assert!(matches!(err, StorageError::UnknownLevel { .. }));
    }

    #[test]
    fn empty_scan() {
        let wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        assert_eq!(wh.scan_facts(&[]).unwrap().iter().count(), 0);
    }
}
