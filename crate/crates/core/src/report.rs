//! Analytical reports over a built cube: country-vs-overall ingredient
//! comparison, herb co-occurrence and yearly trend. Output as aligned text,
//! CSV, or a JSON chart spec.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cube::{AggKind, Cube, CubeError, QuerySpec, ResultSet, Value};
use crate::numeric::format_ratio;
use crate::storage::{LevelFilter, Warehouse};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("unknown report `{0}`")]
    UnknownReport(String),
    #[error("report `{report}` requires parameter `{param}`")]
    MissingParam { report: String, param: String },
    #[error("parameter `{param}`: {message}")]
    InvalidParam { param: String, message: String },
    #[error("unknown format `{0}` (expected table, csv or chartspec)")]
    UnknownFormat(String),
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Cube(#[from] CubeError),
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

pub const INGREDIENT_COMPARISON: &str = "ingredient_comparison";
pub const HERB_COOCCURRENCE: &str = "herb_cooccurrence";
pub const YEARLY_TREND: &str = "yearly_trend";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDoc {
    pub name: String,
    pub required: bool,
    pub default: Option<String>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDef {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

impl ReportDef {
    pub fn new(name: &str, params: &[(&str, &str)]) -> Self {
        ReportDef {
            name: name.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportTemplate {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamDoc>,
}

fn param(name: &str, required: bool, default: Option<&str>, description: &str) -> ParamDoc {
    ParamDoc { name: name.into(), required, default: default.map(Into::into), description: description.into() }
}

pub fn builtin_report_defs() -> Vec<ReportTemplate> {
    vec![
        ReportTemplate {
            name: INGREDIENT_COMPARISON.into(),
            description: "per-herb average quantity for one country against all countries, for a formula and year"
                .into(),
            params: vec![
                param("formula", true, None, "formula name, e.g. Ge Gen Tang"),
                param("year", true, None, "calendar year, e.g. 2010"),
                param("country", true, None, "country to compare, e.g. China"),
                param("measure", false, Some("quantity"), "measure to average"),
            ],
        },
        ReportTemplate {
            name: HERB_COOCCURRENCE.into(),
            description: "pairs of herbs prescribed together, counted per prescription".into(),
            params: vec![
                param("formula", false, None, "restrict to one formula"),
                param("year", false, None, "restrict to one calendar year"),
                param("limit", false, Some("50"), "maximum number of pairs (0 = all)"),
            ],
        },
        ReportTemplate {
            name: YEARLY_TREND.into(),
            description: "total quantity and ingredient count per year for a formula".into(),
            params: vec![
                param("formula", true, None, "formula name, e.g. Ge Gen Tang"),
                param("measure", false, Some("quantity"), "measure to total"),
            ],
        },
    ]
}

fn template(name: &str) -> Result<ReportTemplate> {
    builtin_report_defs().into_iter().find(|t| t.name == name).ok_or_else(|| ReportError::UnknownReport(name.into()))
}

/// Parameters with defaults applied; fails on missing required ones and
/// unknown names.
fn resolve_params(def: &ReportDef) -> Result<BTreeMap<String, String>> {
    let t = template(&def.name)?;
    if let Some(k) = def.params.keys().find(|k| !t.params.iter().any(|p| &p.name == *k)) {
        return Err(ReportError::InvalidParam { param: k.clone(), message: format!("not a parameter of {}", t.name) });
    }
    let mut out = BTreeMap::new();
    for p in &t.params {
        match def.params.get(&p.name) {
            Some(v) => {
                out.insert(p.name.clone(), v.clone());
            }
            None if p.required => {
                return Err(ReportError::MissingParam { report: def.name.clone(), param: p.name.clone() })
            }
            None => {
                if let Some(d) = &p.default {
                    out.insert(p.name.clone(), d.clone());
                }
            }
        }
    }
    Ok(out)
}

/// The cube queries a report issues, in order. Co-occurrence is answered
/// from the prescription-level facts and has no cube plan.
pub fn report_plan(def: &ReportDef) -> Result<Vec<QuerySpec>> {
    let p = resolve_params(def)?;
    let get = |k: &str| p.get(k).map(String::as_str).unwrap_or_default();
    Ok(match def.name.as_str() {
        INGREDIENT_COMPARISON => {
            let overall = QuerySpec::default()
                .group("Herb", "herb")
                .filter("Formula", "formula", &[get("formula")])
                .filter("Date", "year", &[get("year")])
                .measure(get("measure"), AggKind::Sum)
                .measure(get("measure"), AggKind::Count)
                .measure(get("measure"), AggKind::Avg);
            let country = overall.clone().filter("Source", "country", &[get("country")]);
            vec![country, overall]
        }
        YEARLY_TREND => vec![QuerySpec::default()
            .group("Date", "year")
            .filter("Formula", "formula", &[get("formula")])
            .measure(get("measure"), AggKind::Sum)
            .measure(get("measure"), AggKind::Count)],
        HERB_COOCCURRENCE => Vec::new(),
        other => return Err(ReportError::UnknownReport(other.into())),
    })
}

/// A titled table of already-rendered cell strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Column used as the chart x axis and the columns plotted as series.
    pub x_column: usize,
    pub series_columns: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Csv,
    Chartspec,
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "chartspec" => Ok(ReportFormat::Chartspec),
            other => Err(ReportError::UnknownFormat(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub format: ReportFormat,
    pub content: String,
}

fn ratio_parts(rs: &ResultSet, row: &[Value]) -> (i128, i128) {
    let find = |prefix: &str| rs.columns.iter().position(|c| c.starts_with(prefix)).expect("planned column");
    match (&row[find("sum(")], &row[find("count(")]) {
        (Value::Int(s), Value::Int(c)) => (*s, *c),
        _ => unreachable!("sum and count are integers"),
    }
}

/// Relative difference `100·(a − b)/b` of two averages given as sum/count,
/// rounded half-up to two decimals.
pub fn relative_difference_pct(a_sum: i128, a_count: i128, b_sum: i128, b_count: i128) -> String {
    // 100·(a_sum/a_count − b_sum/b_count)/(b_sum/b_count)
    //   = 100·(a_sum·b_count − b_sum·a_count)/(a_count·b_sum)
    let num = 100 * (a_sum * b_count - b_sum * a_count);
    let den = a_count * b_sum;
    format_ratio(num, den, 2)
}

/// Produces the report table, answering cube-backed reports through
/// `cube.query`.
pub fn build_report(cube: &Cube, wh: &Warehouse, def: &ReportDef) -> Result<ReportTable> {
    cube.check_fresh(wh)?;
    let p = resolve_params(def)?;
    let plan = report_plan(def)?;
    let schema = wh.schema();
    match def.name.as_str() {
        INGREDIENT_COMPARISON => {
            let country = cube.query(schema, &plan[0])?;
            let overall = cube.query(schema, &plan[1])?;
            Ok(comparison_table(&p, &country, &overall))
        }
        YEARLY_TREND => {
            let rs = cube.query(schema, &plan[0])?;
            Ok(ReportTable {
                title: format!("Yearly {} of {}", p["measure"], p["formula"]),
                columns: rs.columns.clone(),
                rows: rs.rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect(),
                x_column: 0,
                series_columns: vec![1, 2],
            })
        }
        HERB_COOCCURRENCE => cooccurrence_table(wh, &p),
        other => Err(ReportError::UnknownReport(other.into())),
    }
}

fn comparison_table(p: &BTreeMap<String, String>, country: &ResultSet, overall: &ResultSet) -> ReportTable {
    let c = &p["country"];
    let by_herb = |rs: &ResultSet| -> BTreeMap<String, Vec<Value>> {
        rs.rows.iter().map(|r| (r[0].to_string(), r.clone())).collect()
    };
    let cm = by_herb(country);
    let om = by_herb(overall);
    let herbs: BTreeSet<&String> = cm.keys().chain(om.keys()).collect();
    let avg_col = country.columns.iter().position(|c| c.starts_with("avg(")).expect("planned column");
    let rows = herbs
        .into_iter()
        .map(|h| {
            let cr = cm.get(h);
            let or = om.get(h);
            let diff = match (cr, or) {
                (Some(cr), Some(or)) => {
                    let (cs, cc) = ratio_parts(country, cr);
                    let (os, oc) = ratio_parts(overall, or);
                    relative_difference_pct(cs, cc, os, oc)
                }
                _ => String::new(),
            };
            vec![
                h.clone(),
                cr.map(|r| r[avg_col].to_string()).unwrap_or_default(),
                or.map(|r| r[avg_col].to_string()).unwrap_or_default(),
                diff,
            ]
        })
        .collect();
    ReportTable {
        title: format!("{c} versus overall average {} of {} prescribed in {}", p["measure"], p["formula"], p["year"]),
        columns: vec!["herb".into(), format!("avg_{c}"), "avg_overall".into(), "diff_pct".into()],
        rows,
        x_column: 0,
        series_columns: vec![1, 2],
    }
}

/// Per unordered herb pair, the number of distinct prescriptions that
/// contain both, descending by count then by pair.
pub fn herb_pair_counts(wh: &Warehouse, filters: &[LevelFilter]) -> Result<Vec<((String, String), u64)>> {
    let layout = wh.layout();
    let herb_dim = layout.dimension_index("Herb").ok_or_else(|| CubeError::UnknownDimension("Herb".into()))?;
    let herb_level = layout.dimensions[herb_dim]
        .level_index("herb")
        .ok_or_else(|| CubeError::UnknownLevel { dimension: "Herb".into(), level: "herb".into() })?;
    let pid = wh
        .schema()
        .fact
        .degenerate_keys
        .iter()
        .position(|k| k.name == "prescription_id")
        .ok_or_else(|| ReportError::InvalidParam {
            param: "prescription_id".into(),
            message: "fact table has no prescription_id".into(),
        })?;
    let scan = wh.scan_facts(filters).map_err(CubeError::from)?;
    let mut by_prescription: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for f in scan.iter() {
        by_prescription.entry(f.row.degenerate[pid].as_str()).or_default().insert(f.level(herb_dim, herb_level));
    }
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for herbs in by_prescription.values() {
        let herbs: Vec<&str> = herbs.iter().copied().collect();
        for i in 0..herbs.len() {
            for j in i + 1..herbs.len() {
                *counts.entry((herbs[i].to_string(), herbs[j].to_string())).or_default() += 1;
            }
        }
    }
    let mut out: Vec<_> = counts.into_iter().collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

fn cooccurrence_table(wh: &Warehouse, p: &BTreeMap<String, String>) -> Result<ReportTable> {
    let mut filters = Vec::new();
    if let Some(f) = p.get("formula") {
        filters.push(LevelFilter::eq("Formula", "formula", f));
    }
    if let Some(y) = p.get("year") {
        filters.push(LevelFilter::eq("Date", "year", y));
    }
    let limit: usize = p
        .get("limit")
        .map(|l| l.parse())
        .transpose()
        .map_err(|_| ReportError::InvalidParam { param: "limit".into(), message: "expected an integer".into() })?
        .unwrap_or(0);
    let mut pairs = herb_pair_counts(wh, &filters)?;
    if limit > 0 {
        pairs.truncate(limit);
    }
    let mut scope = Vec::new();
    if let Some(f) = p.get("formula") {
        scope.push(f.clone());
    }
    if let Some(y) = p.get("year") {
        scope.push(y.clone());
    }
    let title = if scope.is_empty() {
        "Herb co-occurrence by prescription".to_string()
    } else {
        format!("Herb co-occurrence by prescription ({})", scope.join(", "))
    };
    Ok(ReportTable {
        title,
        columns: vec!["herb_a".into(), "herb_b".into(), "prescriptions".into()],
        rows: pairs.into_iter().map(|((a, b), n)| vec![a, b, n.to_string()]).collect(),
        x_column: 0,
        series_columns: vec![2],
    })
}

pub fn render_report(cube: &Cube, wh: &Warehouse, def: &ReportDef, format: ReportFormat) -> Result<RenderedReport> {
    let table = build_report(cube, wh, def)?;
    Ok(RenderedReport { format, content: render_table_as(&table, &def.name, format) })
}

pub fn render_table_as(table: &ReportTable, report: &str, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => {
            let cols: Vec<&str> = table.columns.iter().map(String::as_str).collect();
            format!("{}\n\n{}", table.title, render_aligned(&cols, &table.rows))
        }
        ReportFormat::Csv => render_csv(&table.columns, &table.rows),
        ReportFormat::Chartspec => chartspec(table, report),
    }
}

#[derive(Debug, Serialize)]
struct ChartSpec<'a> {
    title: &'a str,
    x_axis: &'a str,
    series: Vec<Series<'a>>,
}

#[derive(Debug, Serialize)]
struct Series<'a> {
    name: &'a str,
    points: Vec<Point>,
}

#[derive(Debug, Serialize)]
struct Point {
    x: String,
    y: serde_json::Value,
}

fn chartspec(table: &ReportTable, report: &str) -> String {
    let x_of = |row: &[String]| -> String {
        if report == HERB_COOCCURRENCE {
            format!("{} + {}", row[0], row[1])
        } else {
            row[table.x_column].clone()
        }
    };
    let x_axis = if report == HERB_COOCCURRENCE { "herb pair" } else { &table.columns[table.x_column] };
    let series = table
        .series_columns
        .iter()
        .map(|&c| Series {
            name: &table.columns[c],
            points: table
                .rows
                .iter()
                .filter(|r| !r[c].is_empty())
                .map(|r| Point {
                    x: x_of(r),
                    // Numbers keep their exact decimal text.
                    y: serde_json::from_str(&r[c]).unwrap_or_else(|_| serde_json::Value::String(r[c].clone())),
                })
                .collect(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&ChartSpec { title: &table.title, x_axis, series }).expect("chart spec");
    s.push('\n');
    s
}

/// Fixed-width columns, a rule line under the header. Numeric-looking cells
/// are right-aligned.
pub fn render_aligned<S: AsRef<str>>(columns: &[S], rows: &[Vec<String>]) -> String {
    let width = |s: &str| s.chars().count();
    let mut widths: Vec<usize> = columns.iter().map(|c| width(c.as_ref())).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(width(cell));
        }
    }
    let numeric = |s: &str| !s.is_empty() && crate::numeric::Decimal::parse(s).is_some();
    let mut out = String::new();
    let line = |cells: Vec<(&str, bool)>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|((s, right), w)| {
                let pad = w - width(s);
                if *right {
                    format!("{}{s}", " ".repeat(pad))
                } else {
                    format!("{s}{}", " ".repeat(pad))
                }
            })
            .collect();
        let mut l = parts.join("  ");
        while l.ends_with(' ') {
            l.pop();
        }
        l.push('\n');
        l
    };
    out.push_str(&line(columns.iter().map(|c| (c.as_ref(), false)).collect()));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&rule.join("  "));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(|c| (c.as_str(), numeric(c))).collect()));
    }
    out
}

/// RFC 4180 CSV with a header row.
pub fn render_csv<S: AsRef<str>>(columns: &[S], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(columns.iter().map(|c| c.as_ref())).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Parses CSV produced by [`render_csv`] back into header and rows.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| ReportError::Csv(e.to_string()))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(|e| ReportError::Csv(e.to_string())))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_templates_with_stable_names() {
        let defs = builtin_report_defs();
        let names: Vec<&str> = defs.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, vec![INGREDIENT_COMPARISON, HERB_COOCCURRENCE, YEARLY_TREND]);
    }

    #[test]
    fn templates_plan_valid_specs() {
        let schema = crate::model::builtin_tcm_schema();
        let layout = crate::model::SchemaLayout::new(&schema).unwrap();
        for t in builtin_report_defs() {
            let params = t
                .params
                .iter()
                .filter(|p| p.required)
                .map(|p| (p.name.clone(), if p.name == "year" { "2010" } else { "X" }.to_string()))
                .collect();
            let def = ReportDef { name: t.name.clone(), params };
            for spec in report_plan(&def).unwrap() {
                crate::cube::validate_spec(&schema, &layout, &spec).unwrap();
            }
        }
    }

    #[test]
    fn missing_and_unknown() {
        let def = ReportDef::new(INGREDIENT_COMPARISON, &[("formula", "Ge Gen Tang"), ("year", "2010")]);
        assert!(matches!(report_plan(&def), Err(ReportError::MissingParam { .. })));
        assert!(matches!(report_plan(&ReportDef::new("pie", &[])), Err(ReportError::UnknownReport(_))));
    }

    #[test]
    fn relative_difference_rounding() {
        // China avg 110, overall avg 100 → +10.00
        assert_eq!(relative_difference_pct(220, 2, 300, 3), "10.00");
        // 1/3 → 33.33; 2/3 → 66.67
        assert_eq!(relative_difference_pct(4, 1, 3, 1), "33.33");
        assert_eq!(relative_difference_pct(5, 1, 3, 1), "66.67");
        assert_eq!(relative_difference_pct(2, 1, 3, 1), "-33.33");
    }

    #[test]
    fn aligned_table_shape() {
        let out = render_aligned(&["herb", "avg"], &[vec!["Ge Gen".into(), "12.5".into()], vec!["Ma Huang".into(), "3".into()]]);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "herb      avg");
        assert_eq!(lines[1], "--------  ----");
        assert_eq!(lines[2], "Ge Gen    12.5");
        assert_eq!(lines[3], "Ma Huang     3");
    }

    #[test]
    fn csv_quotes_and_parses_back() {
        let rows = vec![vec!["a, b".to_string(), "say \"hi\"".to_string()]];
        let text = render_csv(&["x", "y"], &rows);
        let (h, back) = parse_csv(&text).unwrap();
        assert_eq!(h, vec!["x", "y"]);
        assert_eq!(back, rows);
    }
}
