use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{choose_parent, Aggregate, Cube, CubeError, CuboidId, Result};
use crate::model::{SchemaDef, SchemaLayout};
use crate::numeric::format_ratio;
use crate::storage::{LevelFilter, Warehouse};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupBySpec {
    pub dimension: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<String>,
    pub level: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub dimension: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<String>,
    pub level: String,
    #[serde(rename = "in")]
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggKind {
    Sum,
    Count,
    Min,
    Max,
    Avg,
}

impl AggKind {
    pub const ALL: [AggKind; 5] = [AggKind::Sum, AggKind::Count, AggKind::Min, AggKind::Max, AggKind::Avg];

    pub fn name(self) -> &'static str {
        match self {
            AggKind::Sum => "sum",
            AggKind::Count => "count",
            AggKind::Min => "min",
            AggKind::Max => "max",
            AggKind::Avg => "avg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub measure: String,
    pub agg: AggKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    #[serde(default)]
    pub group_by: Vec<GroupBySpec>,
    #[serde(default)]
    pub filters: Vec<FilterSpec>,
    #[serde(default)]
    pub measures: Vec<MeasureSpec>,
}

impl QuerySpec {
    pub fn group(mut self, dimension: &str, level: &str) -> Self {
        self.group_by.push(GroupBySpec { dimension: dimension.into(), hierarchy: None, level: level.into() });
        self
    }

    pub fn filter(mut self, dimension: &str, level: &str, values: &[&str]) -> Self {
        self.filters.push(FilterSpec {
            dimension: dimension.into(),
            hierarchy: None,
            level: level.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        });
        self
    }

    pub fn measure(mut self, measure: &str, agg: AggKind) -> Self {
        self.measures.push(MeasureSpec { measure: measure.into(), agg });
        self
    }
}

/// A spec checked against a schema, with names replaced by indexes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSpec {
    pub group_by: Vec<(usize, usize)>,
    pub filters: Vec<(usize, usize, BTreeSet<String>)>,
    pub measures: Vec<(usize, AggKind)>,
    pub columns: Vec<String>,
}

fn resolve_level(
    layout: &SchemaLayout,
    dimension: &str,
    hierarchy: Option<&str>,
    level: &str,
) -> Result<(usize, usize)> {
    let d = layout.dimension_index(dimension).ok_or_else(|| CubeError::UnknownDimension(dimension.into()))?;
    let dim = &layout.dimensions[d];
    let unknown = || CubeError::UnknownLevel { dimension: dimension.into(), level: level.into() };
    let l = dim.level_index(level).ok_or_else(unknown)?;
    if let Some(h) = hierarchy {
        let (_, levels) = dim.hierarchies.iter().find(|(n, _)| n == h).ok_or_else(|| CubeError::UnknownHierarchy {
            dimension: dimension.into(),
            hierarchy: h.into(),
        })?;
        if !levels.contains(&l) {
            return Err(unknown());
        }
    }
    Ok((d, l))
}

pub fn validate_spec(schema: &SchemaDef, layout: &SchemaLayout, spec: &QuerySpec) -> Result<ResolvedSpec> {
    let mut group_by = Vec::new();
    let mut columns = Vec::new();
    for g in &spec.group_by {
        let (d, l) = resolve_level(layout, &g.dimension, g.hierarchy.as_deref(), &g.level)?;
        if group_by.iter().any(|(gd, _)| *gd == d) {
            return Err(CubeError::DuplicateGroupBy(g.dimension.clone()));
        }
        group_by.push((d, l));
        columns.push(g.level.clone());
    }
    let mut filters = Vec::new();
    for f in &spec.filters {
        let (d, l) = resolve_level(layout, &f.dimension, f.hierarchy.as_deref(), &f.level)?;
        filters.push((d, l, f.values.iter().cloned().collect()));
    }
    let mut measures = Vec::new();
    for m in &spec.measures {
        let i = schema.measure_index(&m.measure).ok_or_else(|| CubeError::UnknownMeasure(m.measure.clone()))?;
        measures.push((i, m.agg));
        columns.push(format!("{}({})", m.agg.name(), m.measure));
    }
    Ok(ResolvedSpec { group_by, filters, measures, columns })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i128),
    /// Fixed-point decimal rendering (averages).
    Decimal(String),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Decimal(s) | Value::Text(s) => f.write_str(s),
        }
    }
}

/// Tabular answer: group-by columns then measure columns; rows ordered by
/// their coordinate values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// Decimal places used when rendering averages.
pub const AVG_PLACES: u32 = 6;

pub(crate) fn measure_value(agg: &Aggregate, kind: AggKind) -> Value {
    match kind {
        AggKind::Sum => Value::Int(agg.sum),
        AggKind::Count => Value::Int(agg.count as i128),
        AggKind::Min => Value::Int(agg.min as i128),
        AggKind::Max => Value::Int(agg.max as i128),
        AggKind::Avg => Value::Decimal(format_ratio(agg.sum, agg.count as i128, AVG_PLACES)),
    }
}

fn finish(spec: &ResolvedSpec, groups: impl Iterator<Item = (Vec<String>, Vec<Aggregate>)>) -> ResultSet {
    let rows = groups
        .map(|(coords, aggs)| {
            coords
                .into_iter()
                .map(Value::Text)
                .chain(spec.measures.iter().map(|(m, k)| measure_value(&aggs[*m], *k)))
                .collect()
        })
        .collect();
    ResultSet { columns: spec.columns.clone(), rows }
}

/// Reference answer computed by one full scan of the facts.
pub fn oracle_query(wh: &Warehouse, spec: &QuerySpec) -> Result<ResultSet> {
    let resolved = validate_spec(wh.schema(), wh.layout(), spec)?;
    let layout = wh.layout();
    let filters: Vec<LevelFilter> = resolved
        .filters
        .iter()
        .map(|(d, l, values)| LevelFilter {
            dimension: layout.dimensions[*d].name.clone(),
            level: layout.dimensions[*d].levels[*l].name.clone(),
            values: values.clone(),
        })
        .collect();
    let scan = wh.scan_facts(&filters)?;
    let mut groups: BTreeMap<Vec<String>, Vec<Aggregate>> = BTreeMap::new();
    for fact in scan.iter() {
        let key: Vec<String> = resolved.group_by.iter().map(|&(d, l)| fact.level(d, l).to_string()).collect();
        match groups.get_mut(&key) {
            Some(aggs) => {
                for (a, &v) in aggs.iter_mut().zip(&fact.row.measures) {
                    a.merge(&Aggregate::of(v));
                }
            }
            None => {
                groups.insert(key, fact.row.measures.iter().map(|&v| Aggregate::of(v)).collect());
            }
        }
    }
    Ok(finish(&resolved, groups.into_iter()))
}

impl Cube {
    /// The cuboid that would answer `spec`: the exact match when materialized
    /// and able to evaluate the filters, else the smallest materialized
    /// cuboid that can.
    pub fn route(&self, spec: &ResolvedSpec) -> CuboidId {
        let n = self.dims.len();
        let mut needed: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut exact = vec![None; n];
        for &(d, l) in &spec.group_by {
            needed[d].push(l);
            exact[d] = Some(l);
        }
        for (d, l, _) in &spec.filters {
            needed[*d].push(*l);
        }
        let exact = CuboidId(exact);
        let exact_ok = exact.0.iter().zip(&needed).zip(&self.dims).all(|((e, need), dim)| match e {
            Some(e) => need.iter().all(|&l| dim.can_derive(*e, l)),
            None => need.is_empty(),
        });
        if exact_ok && self.sizes.contains_key(&exact) {
            return exact;
        }
        choose_parent(&self.dims, &self.sizes, &exact, Some(&needed)).clone()
    }

    pub fn query(&self, schema: &SchemaDef, spec: &QuerySpec) -> Result<ResultSet> {
        let resolved = validate_spec(schema, &self.layout, spec)?;
        self.query_resolved(&resolved)
    }

    pub fn query_resolved(&self, spec: &ResolvedSpec) -> Result<ResultSet> {
        let id = self.route(spec);
        let cuboid = self.cuboids.get(&id).ok_or_else(|| CubeError::NotLoaded(id.to_string()))?;

        // Position of each dimension within the cuboid's coordinates.
        let mut pos = vec![usize::MAX; id.0.len()];
        let mut p = 0;
        for (d, l) in id.0.iter().enumerate() {
            if l.is_some() {
                pos[d] = p;
                p += 1;
            }
        }
        let level_at = |d: usize| id.0[d].expect("routed cuboid covers every needed dimension");

        let filters: Vec<(usize, usize, usize, Vec<bool>)> = spec
            .filters
            .iter()
            .map(|(d, l, values)| {
                let dim = &self.dims[*d];
                let mut allowed = vec![false; dim.dictionaries[*l].len()];
                for v in values {
                    if let Some(c) = dim.code(*l, v) {
                        allowed[c as usize] = true;
                    }
                }
                (*d, level_at(*d), *l, allowed)
            })
            .collect();

        let mut groups: BTreeMap<Vec<u32>, Vec<Aggregate>> = BTreeMap::new();
        'cells: for cell in &cuboid.cells {
            for (d, from, to, allowed) in &filters {
                let code = self.dims[*d].roll(*from, *to, cell.coords[pos[*d]]);
                if !allowed[code as usize] {
                    continue 'cells;
                }
            }
            let key: Vec<u32> = spec
                .group_by
                .iter()
                .map(|&(d, l)| self.dims[d].roll(level_at(d), l, cell.coords[pos[d]]))
                .collect();
            match groups.get_mut(&key) {
                Some(aggs) => super::merge_all(aggs, &cell.aggregates),
                None => {
                    groups.insert(key, cell.aggregates.to_vec());
                }
            }
        }
        let decoded = groups.into_iter().map(|(codes, aggs)| {
            let coords = spec
                .group_by
                .iter()
                .zip(codes)
                .map(|(&(d, l), c)| self.dims[d].dictionaries[l][c as usize].clone())
                .collect();
            (coords, aggs)
        });
        Ok(finish(spec, decoded))
    }

    /// All cells of a materialized cuboid, rendered as a result set with
    /// every aggregate of every measure. No routing involved.
    pub fn cuboid_result_set(&self, id: &CuboidId) -> Option<ResultSet> {
        let cuboid = self.cuboids.get(id)?;
        let mut columns: Vec<String> = id
            .0
            .iter()
            .zip(&self.layout.dimensions)
            .filter_map(|(l, d)| l.map(|l| d.levels[l].name.clone()))
            .collect();
        for m in &self.measures {
            for k in AggKind::ALL {
                columns.push(format!("{}({m})", k.name()));
            }
        }
        let rows = cuboid
            .cells
            .iter()
            .map(|cell| {
                self.cell_values(id, cell)
                    .into_iter()
                    .map(|v| Value::Text(v.to_string()))
                    .chain(cell.aggregates.iter().flat_map(|a| AggKind::ALL.map(|k| measure_value(a, k))))
                    .collect()
            })
            .collect();
        Some(ResultSet { columns, rows })
    }
}

/// The spec whose answer is exactly the cells of cuboid `id`.
pub fn cuboid_spec(layout: &SchemaLayout, measures: &[String], id: &CuboidId) -> QuerySpec {
    let mut spec = QuerySpec::default();
    for (l, d) in id.0.iter().zip(&layout.dimensions) {
        if let Some(l) = l {
            spec = spec.group(&d.name, &d.levels[*l].name);
        }
    }
    for m in measures {
        for k in AggKind::ALL {
            spec = spec.measure(m, k);
        }
    }
    spec
}

impl ResultSet {
    pub fn render_table(&self) -> String {
        let rows: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect();
        let cols: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        crate::report::render_aligned(&cols, &rows)
    }

    pub fn render_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect();
        crate::report::render_csv(&self.columns, &rows)
    }

    pub fn render_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result set serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{build_cube, MaterializationPolicy};
    use crate::model::builtin_tcm_schema;
    use crate::storage::FactRow;

    fn one_fact() -> Warehouse {
        let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        let (d, _) = wh.resolve_member("Dates", "20100315", false).unwrap();
        wh.append_facts(vec![FactRow { keys: vec![d, 0, 0, 0], degenerate: vec!["P1".into()], measures: vec![9000] }])
            .unwrap();
        wh.checkpoint().unwrap();
        wh
    }

    #[test]
    fn single_fact_at_apex() {
        let wh = one_fact();
        let mut spec = QuerySpec::default();
        for k in AggKind::ALL {
            spec = spec.measure("quantity", k);
        }
        let rs = oracle_query(&wh, &spec).unwrap();
        assert_eq!(
            rs.rows,
            vec![vec![
                Value::Int(9000),
                Value::Int(1),
                Value::Int(9000),
                Value::Int(9000),
                Value::Decimal("9000.000000".into())
            ]]
        );
        let cube = build_cube(&wh, &MaterializationPolicy::full(), 1).unwrap();
        assert_eq!(cube.query(wh.schema(), &spec).unwrap(), rs);
    }

    #[test]
    fn empty_warehouse_oracle_is_empty() {
        let wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        let spec = QuerySpec::default().group("Herb", "herb").measure("quantity", AggKind::Sum);
        assert!(oracle_query(&wh, &spec).unwrap().rows.is_empty());
    }

    #[test]
    fn absent_year_filter_is_empty_not_error() {
        let wh = one_fact();
        let cube = build_cube(&wh, &MaterializationPolicy::full(), 1).unwrap();
        let spec = QuerySpec::default().filter("Date", "year", &["1999"]).measure("quantity", AggKind::Sum);
        assert!(cube.query(wh.schema(), &spec).unwrap().rows.is_empty());
        assert!(oracle_query(&wh, &spec).unwrap().rows.is_empty());
    }

    #[test]
    fn spec_errors() {
        let schema = builtin_tcm_schema();
        let layout = SchemaLayout::new(&schema).unwrap();
        let bad_level = QuerySpec::default().group("Source", "continent");
        assert!(matches!(validate_spec(&schema, &layout, &bad_level), Err(CubeError::UnknownLevel { .. })));
        let bad_measure = QuerySpec::default().measure("dosage", AggKind::Sum);
        assert!(matches!(validate_spec(&schema, &layout, &bad_measure), Err(CubeError::UnknownMeasure(_))));
        let dup = QuerySpec::default().group("Date", "year").group("Date", "month");
        assert!(matches!(validate_spec(&schema, &layout, &dup), Err(CubeError::DuplicateGroupBy(_))));
        let mut wrong_h = QuerySpec::default().group("Source", "country");
        wrong_h.group_by[0].hierarchy = Some("by_type".into());
        assert!(matches!(validate_spec(&schema, &layout, &wrong_h), Err(CubeError::UnknownLevel { .. })));
    }

    #[test]
    fn spec_json_shape() {
        let text = r#"{"group_by":[{"dimension":"Herb","level":"herb"}],
            "filters":[{"dimension":"Source","hierarchy":"by_geography","level":"country","in":["China"]}],
            "measures":[{"measure":"quantity","agg":"avg"}]}"#;
        let spec: QuerySpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.filters[0].values, vec!["China"]);
        assert_eq!(spec.measures[0].agg, AggKind::Avg);
    }
}
