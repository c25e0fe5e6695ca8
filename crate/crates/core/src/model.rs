//! Dimensional schema definitions: parsing, validation and the built-in TCM
//! snowflake schema.
//!
//! A schema is a single fact table plus a list of dimensions. Each dimension
//! is a tree of lookup tables rooted at its base table; every non-base table
//! names, via `parent`, the table it hangs off (one step closer to the fact).
//! Hierarchies list levels finest to coarsest; the "All" level is implicit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Name of the implicit top level of every hierarchy.
pub const ALL_LEVEL: &str = "All";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    SyntaxError { line: usize, column: usize, message: String },
    #[error("duplicate table name `{0}`")]
    DuplicateName(String),
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("schema is invalid: {0}")]
    InvalidSchema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Text,
    Integer,
    Decimal,
    Date,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueKind::Text => "text",
            ValueKind::Integer => "integer",
            ValueKind::Decimal => "decimal",
            ValueKind::Date => "date",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaDef {
    pub name: String,
    pub fact: FactDef,
    pub dimensions: Vec<DimensionDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionDef {
    pub name: String,
    pub tables: Vec<LookupTableDef>,
    #[serde(default)]
    pub hierarchies: Vec<Hierarchy>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookupTableDef {
    pub name: String,
    pub natural_key: String,
    pub attributes: Vec<AttributeDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeDef {
    pub name: String,
    pub kind: ValueKind,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hierarchy {
    pub name: String,
    pub levels: Vec<LevelDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelDef {
    pub level: String,
    pub attribute: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactDef {
    pub name: String,
    #[serde(rename = "dimensions")]
    pub dimension_refs: Vec<String>,
    #[serde(default)]
    pub degenerate_keys: Vec<DegenerateKey>,
    pub measures: Vec<MeasureDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegenerateKey {
    pub name: String,
    pub kind: ValueKind,
}

/// An additive integer measure. Averages are derived at query time from sum
/// and count and are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDef {
    pub name: String,
    pub unit: String,
    /// Minimum allowed value.
    pub min: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    /// JSON pointer into the schema document.
    pub location: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn valid(&self) -> bool {
        self.error_count() == 0
    }

    pub fn error_count(&self) -> usize {
        self.issues.iter().filter(|i| i.severity == Severity::Error).count()
    }

    pub fn warning_count(&self) -> usize {
        self.issues.iter().filter(|i| i.severity == Severity::Warning).count()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    fn error(&mut self, code: &str, location: String, message: String) {
        self.issues.push(Issue { severity: Severity::Error, code: code.into(), message, location });
    }

    fn warning(&mut self, code: &str, location: String, message: String) {
        self.issues.push(Issue { severity: Severity::Warning, code: code.into(), message, location });
    }
}

/// Parses a schema document. Only structural well-formedness is checked here;
/// use [`validate_schema`] for the semantic rules.
pub fn parse_schema(text: &str) -> Result<SchemaDef, ModelError> {
    let syntax = |e: serde_json::Error| ModelError::SyntaxError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let doc: serde_json::Value = serde_json::from_str(text).map_err(syntax)?;
    let obj = doc.as_object().ok_or_else(|| ModelError::SyntaxError {
        line: 1,
        column: 1,
        message: "schema document must be a JSON object".into(),
    })?;
    if !obj.contains_key("fact") {
        return Err(ModelError::MissingSection("fact".into()));
    }
    match obj.get("dimensions") {
        None => return Err(ModelError::MissingSection("dimensions".into())),
        Some(serde_json::Value::Array(a)) if a.is_empty() => {
            return Err(ModelError::MissingSection("dimensions".into()))
        }
        _ => {}
    }
    let schema: SchemaDef = serde_json::from_str(text).map_err(syntax)?;
    let mut seen = BTreeSet::new();
    for name in schema.table_names() {
        if !seen.insert(name) {
            return Err(ModelError::DuplicateName(name.to_string()));
        }
    }
    Ok(schema)
}

/// Renders a schema back into its document form (pretty-printed JSON).
pub fn schema_to_string(schema: &SchemaDef) -> String {
    let mut s = serde_json::to_string_pretty(schema).expect("schema serializes");
    s.push('\n');
    s
}

impl SchemaDef {
    /// Fact table name followed by every lookup table name in declaration order.
    pub fn table_names(&self) -> Vec<&str> {
        std::iter::once(self.fact.name.as_str())
            .chain(self.dimensions.iter().flat_map(|d| d.tables.iter().map(|t| t.name.as_str())))
            .collect()
    }

    pub fn dimension(&self, name: &str) -> Option<&DimensionDef> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    pub fn table(&self, name: &str) -> Option<(&DimensionDef, &LookupTableDef)> {
        self.dimensions
            .iter()
            .find_map(|d| d.tables.iter().find(|t| t.name == name).map(|t| (d, t)))
    }

    pub fn measure_index(&self, name: &str) -> Option<usize> {
        self.fact.measures.iter().position(|m| m.name == name)
    }

    /// SHA-256 over the compact serialized schema.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

impl DimensionDef {
    pub fn table(&self, name: &str) -> Option<&LookupTableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Tables whose `parent` is `name`.
    pub fn children_of<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a LookupTableDef> + 'a {
        self.tables.iter().filter(move |t| t.parent.as_deref() == Some(name))
    }

    pub fn base_table(&self) -> Option<&LookupTableDef> {
        let mut roots = self.tables.iter().filter(|t| t.parent.is_none());
        match (roots.next(), roots.next()) {
            (Some(t), None) => Some(t),
            _ => None,
        }
    }
}

impl LookupTableDef {
    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn natural_key_kind(&self) -> Option<ValueKind> {
        self.attribute(&self.natural_key).map(|a| a.kind)
    }
}

/// Checks every structural and referential rule; problems are reported,
/// never raised.
pub fn validate_schema(schema: &SchemaDef) -> ValidationReport {
    let mut report = ValidationReport::default();

    if schema.name.trim().is_empty() {
        report.error("EmptyName", "/name".into(), "schema name is empty".into());
    }

    let mut table_seen: HashMap<&str, String> = HashMap::new();
    table_seen.insert(schema.fact.name.as_str(), "/fact/name".into());
    for (di, dim) in schema.dimensions.iter().enumerate() {
        for (ti, t) in dim.tables.iter().enumerate() {
            let loc = format!("/dimensions/{di}/tables/{ti}/name");
            if table_seen.contains_key(t.name.as_str()) {
                report.error("DuplicateName", loc, format!("table name `{}` is declared more than once", t.name));
            } else {
                table_seen.insert(t.name.as_str(), loc);
            }
        }
    }

    validate_fact(schema, &mut report);

    let mut dim_seen = BTreeSet::new();
    for (di, dim) in schema.dimensions.iter().enumerate() {
        if !dim_seen.insert(dim.name.as_str()) {
            report.error(
                "DuplicateDimension",
                format!("/dimensions/{di}/name"),
                format!("dimension `{}` is declared more than once", dim.name),
            );
        }
        validate_dimension(di, dim, &mut report);
    }
    report
}

fn validate_fact(schema: &SchemaDef, report: &mut ValidationReport) {
    let fact = &schema.fact;
    if fact.dimension_refs.is_empty() {
        report.error("EmptyFact", "/fact/dimensions".into(), "fact table references no dimension".into());
    }
    if fact.measures.is_empty() {
        report.error("EmptyFact", "/fact/measures".into(), "fact table declares no measure".into());
    }
    let mut refs = BTreeSet::new();
    for (i, r) in fact.dimension_refs.iter().enumerate() {
        let loc = format!("/fact/dimensions/{i}");
        if schema.dimension(r).is_none() {
            report.error("UnresolvedDimension", loc, format!("fact references undeclared dimension `{r}`"));
        } else if !refs.insert(r.as_str()) {
            report.error("DuplicateDimensionRef", loc, format!("dimension `{r}` referenced twice"));
        }
    }
    let mut columns: BTreeSet<&str> = refs.clone();
    for (i, k) in fact.degenerate_keys.iter().enumerate() {
        if !columns.insert(k.name.as_str()) {
            report.error(
                "DuplicateColumn",
                format!("/fact/degenerate_keys/{i}/name"),
                format!("fact column `{}` declared twice", k.name),
            );
        }
    }
    for (i, m) in fact.measures.iter().enumerate() {
        if !columns.insert(m.name.as_str()) {
            report.error(
                "DuplicateColumn",
                format!("/fact/measures/{i}/name"),
                format!("fact column `{}` declared twice", m.name),
            );
        }
    }
    for (di, dim) in schema.dimensions.iter().enumerate() {
        if !refs.contains(dim.name.as_str()) {
            report.warning(
                "UnusedDimension",
                format!("/dimensions/{di}"),
                format!("dimension `{}` is not referenced by the fact table", dim.name),
            );
        }
    }
}

fn validate_dimension(di: usize, dim: &DimensionDef, report: &mut ValidationReport) {
    let base = format!("/dimensions/{di}");
    if dim.tables.is_empty() {
        report.error("EmptyDimension", format!("{base}/tables"), format!("dimension `{}` has no tables", dim.name));
        return;
    }

    let mut tables_ok = true;
    for (ti, t) in dim.tables.iter().enumerate() {
        let tloc = format!("{base}/tables/{ti}");
        if t.attribute(&t.natural_key).is_none() {
            report.error(
                "NaturalKeyNotAttribute",
                format!("{tloc}/natural_key"),
                format!("natural key `{}` of `{}` is not one of its attributes", t.natural_key, t.name),
            );
        }
        if let Some(p) = &t.parent {
            if dim.table(p).is_none() {
                tables_ok = false;
                report.error(
                    "UnknownParent",
                    format!("{tloc}/parent"),
                    format!("parent `{p}` of `{}` is not a table of dimension `{}`", t.name, dim.name),
                );
            }
        }
    }

    // Attribute names are unique across a dimension so that levels can name
    // them unqualified.
    let mut attr_owner: HashMap<&str, &str> = HashMap::new();
    for (ti, t) in dim.tables.iter().enumerate() {
        for (ai, a) in t.attributes.iter().enumerate() {
            if let Some(prev) = attr_owner.insert(a.name.as_str(), t.name.as_str()) {
                report.error(
                    "DuplicateAttribute",
                    format!("{base}/tables/{ti}/attributes/{ai}/name"),
                    format!("attribute `{}` appears in both `{prev}` and `{}`", a.name, t.name),
                );
            }
        }
    }

    // Parent links: detect cycles by walking up from each table.
    let mut in_cycle = BTreeSet::new();
    if tables_ok {
        for t in &dim.tables {
            let mut cur = t.name.as_str();
            let mut visited = vec![cur];
            while let Some(p) = dim.table(cur).and_then(|x| x.parent.as_deref()) {
                if let Some(pos) = visited.iter().position(|v| *v == p) {
                    let members: BTreeSet<&str> = visited[pos..].iter().copied().collect();
                    if members.iter().all(|m| !in_cycle.contains(*m)) {
                        let first = members.iter().next().copied().unwrap_or(p);
                        let ti = dim.tables.iter().position(|x| x.name == first).unwrap_or(0);
                        report.error(
                            "ParentCycle",
                            format!("{base}/tables/{ti}/parent"),
                            format!(
                                "parent links form a cycle: {}",
                                members.iter().copied().collect::<Vec<_>>().join(" -> ")
                            ),
                        );
                    }
                    in_cycle.extend(members);
                    break;
                }
                visited.push(p);
                cur = p;
            }
        }
        if in_cycle.is_empty() {
            let roots = dim.tables.iter().filter(|t| t.parent.is_none()).count();
            if roots != 1 {
                report.error(
                    "RootCount",
                    format!("{base}/tables"),
                    format!("dimension `{}` must have exactly one base table, found {roots}", dim.name),
                );
                tables_ok = false;
            }
        } else {
            tables_ok = false;
        }
    }

    if dim.hierarchies.is_empty() {
        report.warning(
            "NoHierarchy",
            format!("{base}/name"),
            format!("dimension `{}` declares no hierarchy; only the All level is available", dim.name),
        );
    }

    let mut level_attr: HashMap<&str, &str> = HashMap::new();
    let mut finest: Option<&str> = None;
    for (hi, h) in dim.hierarchies.iter().enumerate() {
        let hloc = format!("{base}/hierarchies/{hi}");
        if h.levels.is_empty() {
            report.error("EmptyHierarchy", format!("{hloc}/levels"), format!("hierarchy `{}` has no levels", h.name));
            continue;
        }
        if dim.hierarchies[..hi].iter().any(|o| o.name == h.name) {
            report.error(
                "DuplicateHierarchy",
                format!("{hloc}/name"),
                format!("hierarchy `{}` declared twice in `{}`", h.name, dim.name),
            );
        }
        let mut names = BTreeSet::new();
        for (li, l) in h.levels.iter().enumerate() {
            let lloc = format!("{hloc}/levels/{li}");
            if l.level == ALL_LEVEL {
                report.error(
                    "ReservedLevel",
                    format!("{lloc}/level"),
                    "the All level is implicit and may not be declared".into(),
                );
            } else if !names.insert(l.level.as_str()) {
                report.error(
                    "DuplicateLevel",
                    format!("{lloc}/level"),
                    format!("level `{}` repeated in hierarchy `{}`", l.level, h.name),
                );
            }
            if !attr_owner.contains_key(l.attribute.as_str()) {
                report.error(
                    "UnknownLevelAttribute",
                    format!("{lloc}/attribute"),
                    format!("level `{}` references unknown attribute `{}`", l.level, l.attribute),
                );
            }
            match level_attr.get(l.level.as_str()) {
                Some(a) if *a != l.attribute => report.error(
                    "LevelConflict",
                    format!("{lloc}/attribute"),
                    format!("level `{}` maps to `{a}` elsewhere in `{}`", l.level, dim.name),
                ),
                _ => {
                    level_attr.insert(l.level.as_str(), l.attribute.as_str());
                }
            }
        }
        let first = h.levels[0].level.as_str();
        match finest {
            None => finest = Some(first),
            Some(f) if f != first => report.error(
                "DivergentBaseLevel",
                format!("{hloc}/levels/0/level"),
                format!("hierarchies of `{}` must share their finest level (`{f}` vs `{first}`)", dim.name),
            ),
            _ => {}
        }

        if tables_ok {
            // Each coarser level must live in the same table as the finer
            // one or further out along the snowflake.
            for (li, pair) in h.levels.windows(2).enumerate() {
                let (Some(fine_t), Some(coarse_t)) =
                    (attr_owner.get(pair[0].attribute.as_str()), attr_owner.get(pair[1].attribute.as_str()))
                else {
                    continue;
                };
                if !is_same_or_outer(dim, fine_t, coarse_t) {
                    report.error(
                        "HierarchyOrder",
                        format!("{hloc}/levels/{}/attribute", li + 1),
                        format!(
                            "level `{}` (table `{coarse_t}`) is not reachable outward from level `{}` (table `{fine_t}`)",
                            pair[1].level, pair[0].level
                        ),
                    );
                }
            }
            if let (Some(root), Some(t)) = (dim.base_table(), attr_owner.get(h.levels[0].attribute.as_str())) {
                if *t != root.name {
                    report.error(
                        "BaseLevelTable",
                        format!("{hloc}/levels/0/attribute"),
                        format!("finest level `{}` must read from base table `{}`", h.levels[0].level, root.name),
                    );
                }
            }
        }
    }
}

/// True when `outer` equals `inner` or is reachable from it through child links.
fn is_same_or_outer(dim: &DimensionDef, inner: &str, outer: &str) -> bool {
    let mut cur = Some(outer);
    let mut steps = 0;
    while let Some(t) = cur {
        if t == inner {
            return true;
        }
        steps += 1;
        if steps > dim.tables.len() {
            return false;
        }
        cur = dim.table(t).and_then(|x| x.parent.as_deref());
    }
    false
}

/// A level resolved against the table tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedLevel {
    pub name: String,
    pub attribute: String,
    /// Tables from the base table out to the table holding `attribute`.
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionLayout {
    pub name: String,
    pub base_table: String,
    /// Distinct levels across all hierarchies, in order of first appearance.
    /// Index 0 is the finest level.
    pub levels: Vec<ResolvedLevel>,
    /// Per hierarchy: its name and level indexes into `levels`, finest first.
    pub hierarchies: Vec<(String, Vec<usize>)>,
}

impl DimensionLayout {
    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.name == name)
    }

    /// Whether `coarse` is functionally reachable from `fine` along some
    /// declared hierarchy (every level reaches itself).
    pub fn rolls_up_to(&self, fine: usize, coarse: usize) -> bool {
        fine == coarse
            || self.hierarchies.iter().any(|(_, ls)| {
                let f = ls.iter().position(|&l| l == fine);
                let c = ls.iter().position(|&l| l == coarse);
                matches!((f, c), (Some(f), Some(c)) if f < c)
            })
    }
}

/// Precomputed navigation data for a validated schema, in fact dimension order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaLayout {
    pub dimensions: Vec<DimensionLayout>,
}

impl SchemaLayout {
    pub fn new(schema: &SchemaDef) -> Result<Self, ModelError> {
        let report = validate_schema(schema);
        if !report.valid() {
            let msgs: Vec<String> = report.errors().map(|i| format!("{}: {}", i.code, i.message)).collect();
            return Err(ModelError::InvalidSchema(msgs.join("; ")));
        }
        let mut dimensions = Vec::new();
        for r in &schema.fact.dimension_refs {
            let dim = schema.dimension(r).expect("validated");
            let base = dim.base_table().expect("validated");
            let mut levels: Vec<ResolvedLevel> = Vec::new();
            let mut hierarchies = Vec::new();
            for h in &dim.hierarchies {
                let mut idx = Vec::new();
                for l in &h.levels {
                    let i = match levels.iter().position(|x| x.name == l.level) {
                        Some(i) => i,
                        None => {
                            levels.push(ResolvedLevel {
                                name: l.level.clone(),
                                attribute: l.attribute.clone(),
                                path: table_path(dim, &base.name, &l.attribute),
                            });
                            levels.len() - 1
                        }
                    };
                    idx.push(i);
                }
                hierarchies.push((h.name.clone(), idx));
            }
            dimensions.push(DimensionLayout {
                name: dim.name.clone(),
                base_table: base.name.clone(),
                levels,
                hierarchies,
            });
        }
        Ok(SchemaLayout { dimensions })
    }

    pub fn dimension_index(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.name == name)
    }

    /// Number of cuboids in the aggregation lattice.
    pub fn lattice_size(&self) -> usize {
        self.dimensions.iter().map(|d| d.levels.len() + 1).product()
    }
}

fn table_path(dim: &DimensionDef, base: &str, attribute: &str) -> Vec<String> {
    let owner = dim
        .tables
        .iter()
        .find(|t| t.attribute(attribute).is_some())
        .map(|t| t.name.as_str())
        .unwrap_or(base);
    let mut path = vec![owner.to_string()];
    let mut cur = owner;
    while let Some(p) = dim.table(cur).and_then(|t| t.parent.as_deref()) {
        path.push(p.to_string());
        cur = p;
    }
    path.reverse();
    path
}

fn attr(name: &str, kind: ValueKind, description: &str) -> AttributeDef {
    AttributeDef { name: name.into(), kind, description: description.into() }
}

fn table(name: &str, natural_key: &str, attributes: Vec<AttributeDef>, parent: Option<&str>) -> LookupTableDef {
    LookupTableDef {
        name: name.into(),
        natural_key: natural_key.into(),
        attributes,
        parent: parent.map(Into::into),
    }
}

fn hierarchy(name: &str, levels: &[(&str, &str)]) -> Hierarchy {
    Hierarchy {
        name: name.into(),
        levels: levels
            .iter()
            .map(|(l, a)| LevelDef { level: (*l).into(), attribute: (*a).into() })
            .collect(),
    }
}

/// The TCM prescription warehouse: fact `FormulaList` at one row per
/// prescribed ingredient, snowflaked Date/Formula/Herb/Source dimensions.
pub fn builtin_tcm_schema() -> SchemaDef {
    use ValueKind::*;
    SchemaDef {
        name: "tcm".into(),
        fact: FactDef {
            name: "FormulaList".into(),
            dimension_refs: vec!["Date".into(), "Formula".into(), "Herb".into(), "Source".into()],
            degenerate_keys: vec![DegenerateKey { name: "prescription_id".into(), kind: Text }],
            measures: vec![MeasureDef { name: "quantity".into(), unit: "milligrams".into(), min: 1 }],
        },
        dimensions: vec![
            DimensionDef {
                name: "Date".into(),
                tables: vec![table(
                    "Dates",
                    "day",
                    vec![
                        attr("day", Date, "calendar day (yyyymmdd)"),
                        attr("month", Text, "calendar month (yyyymm)"),
                        attr("quarter", Text, "calendar quarter (yyyyQn)"),
                        attr("year", Integer, "calendar year"),
                    ],
                    None,
                )],
                hierarchies: vec![hierarchy(
                    "calendar",
                    &[("day", "day"), ("month", "month"), ("quarter", "quarter"), ("year", "year")],
                )],
            },
            DimensionDef {
                name: "Formula".into(),
                tables: vec![
                    table(
                        "Formulas",
                        "formula",
                        vec![
                            attr("formula", Text, "formula name (pinyin)"),
                            attr("indication", Text, "primary indication"),
                        ],
                        None,
                    ),
                    table(
                        "FormulaTypes",
                        "formula_type",
                        vec![
                            attr("formula_type", Text, "formula classification"),
                            attr("formula_type_description", Text, "description of the classification"),
                        ],
                        Some("Formulas"),
                    ),
                ],
                hierarchies: vec![hierarchy("by_type", &[("formula", "formula"), ("formula_type", "formula_type")])],
            },
            DimensionDef {
                name: "Herb".into(),
                tables: vec![
                    table(
                        "Herbs",
                        "herb",
                        vec![
                            attr("herb", Text, "herb name (pinyin)"),
                            attr("latin_name", Text, "pharmaceutical name"),
                        ],
                        None,
                    ),
                    table(
                        "HerbTypes",
                        "herb_type",
                        vec![
                            attr("herb_type", Text, "herb category"),
                            attr("herb_type_description", Text, "description of the category"),
                        ],
                        Some("Herbs"),
                    ),
                ],
                hierarchies: vec![hierarchy("by_type", &[("herb", "herb"), ("herb_type", "herb_type")])],
            },
            DimensionDef {
                name: "Source".into(),
                tables: vec![
                    table(
                        "Sources",
                        "source",
                        vec![
                            attr("source", Text, "prescribing source"),
                            attr("city", Text, "city of the prescribing source"),
                        ],
                        None,
                    ),
                    table(
                        "SourceTypes",
                        "source_type",
                        vec![
                            attr("source_type", Text, "kind of prescribing source"),
                            attr("source_type_description", Text, "description of the source kind"),
                        ],
                        Some("Sources"),
                    ),
                    table(
                        "Countries",
                        "country",
                        vec![
                            attr("country", Text, "prescribing country"),
                            attr("region", Text, "world region"),
                        ],
                        Some("Sources"),
                    ),
                ],
                hierarchies: vec![
                    hierarchy("by_type", &[("source", "source"), ("source_type", "source_type")]),
                    hierarchy("by_geography", &[("source", "source"), ("country", "country")]),
                ],
            },
        ],
    }
}

/// Checks a value against its declared kind. Dates are `yyyymmdd`.
pub fn check_value(kind: ValueKind, value: &str) -> bool {
    match kind {
        ValueKind::Text => true,
        ValueKind::Integer => value.parse::<i64>().is_ok(),
        ValueKind::Decimal => crate::numeric::Decimal::parse(value).is_some(),
        ValueKind::Date => crate::numeric::CalendarDate::parse_compact(value).is_some(),
    }
}

/// Per-table column descriptions, keyed by table then attribute.
pub fn column_descriptions(schema: &SchemaDef) -> BTreeMap<String, BTreeMap<String, String>> {
    schema
        .dimensions
        .iter()
        .flat_map(|d| d.tables.iter())
        .map(|t| {
            (
                t.name.clone(),
                t.attributes.iter().map(|a| (a.name.clone(), a.description.clone())).collect(),
            )
        })
        .collect()
}
