//! Command-line surface. Data goes to stdout, diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 validation or data failure, 2 environment or I/O
//! failure (missing files, lock held, no cube), 3 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::cube::{self, CubeError, MaterializationPolicy, QuerySpec};
use crate::datagen::{self, DatagenError, GenConfig};
use crate::etl::{self, EtlError, SourceStatus};
use crate::metadata::{self, MetadataError};
use crate::model::{self, ModelError, Severity};
use crate::report::{self, ReportDef, ReportError, ReportFormat};
use crate::storage::{self, StorageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    DataFailure = 1,
    Environment = 2,
    Usage = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    fn data(m: impl ToString) -> Self {
        CliError { status: ExitStatus::DataFailure, message: m.to_string() }
    }

    fn env(m: impl ToString) -> Self {
        CliError { status: ExitStatus::Environment, message: m.to_string() }
    }

    fn usage(m: impl ToString) -> Self {
        CliError { status: ExitStatus::Usage, message: m.to_string() }
    }
}

impl From<StorageError> for CliError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::Io { .. } | StorageError::PathNotEmpty(_) | StorageError::WarehouseLocked(_) => {
                CliError::env(e)
            }
            e => CliError::data(e),
        }
    }
}

impl From<CubeError> for CliError {
    fn from(e: CubeError) -> Self {
        match e {
            CubeError::Io { .. } => CliError::env(e),
            CubeError::Storage(s) => s.into(),
            CubeError::InvalidPolicy(_) => CliError::usage(e),
            e => CliError::data(e),
        }
    }
}

impl From<EtlError> for CliError {
    fn from(e: EtlError) -> Self {
        match e {
            EtlError::SourceUnreadable { .. } | EtlError::WarehouseLocked(_) => CliError::env(e),
            EtlError::Storage(s) => s.into(),
            EtlError::Metadata(m) => m.into(),
            e => CliError::data(e),
        }
    }
}

impl From<MetadataError> for CliError {
    fn from(e: MetadataError) -> Self {
        match e {
            MetadataError::Storage(s) => s.into(),
            e => CliError::data(e),
        }
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::InvalidConfig(_) => CliError::data(e),
            e => CliError::env(e),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Cube(c) => c.into(),
            ReportError::Csv(_) => CliError::data(e),
            e => CliError::usage(e),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::data(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tcmdw", version, about = "Dimensional warehouse and OLAP cubes for prescription data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TextOrJson {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QueryFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormatArg {
    Table,
    Csv,
    Chartspec,
}

impl From<ReportFormatArg> for ReportFormat {
    fn from(f: ReportFormatArg) -> Self {
        match f {
            ReportFormatArg::Table => ReportFormat::Table,
            ReportFormatArg::Csv => ReportFormat::Csv,
            ReportFormatArg::Chartspec => ReportFormat::Chartspec,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate or print schemas.
    #[command(subcommand)]
    Schema(SchemaCmd),
    /// Create an empty warehouse.
    Init {
        /// Schema file; the built-in TCM schema when omitted.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, env = "TCMDW_DIR")]
        dir: PathBuf,
    },
    /// Generate synthetic source files.
    Datagen {
        /// Generator config; the built-in default when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_config")]
        out: Option<PathBuf>,
        /// Print the default generator config and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Run ETL pipelines.
    #[command(subcommand)]
    Etl(EtlCmd),
    /// Build cubes.
    #[command(subcommand)]
    Cube(CubeCmd),
    /// Answer a query spec from the cube or by full scan.
    Query {
        #[arg(long, env = "TCMDW_DIR")]
        dir: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Answer by scanning facts instead of reading the cube.
        #[arg(long)]
        oracle: bool,
        #[arg(long, value_enum, default_value = "table")]
        format: QueryFormat,
    },
    /// Render reports.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Show the data dictionary.
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Show load lineage.
    #[command(subcommand)]
    Lineage(LineageCmd),
}

#[derive(Debug, Subcommand)]
enum SchemaCmd {
    /// Check a schema file and list every issue.
    Validate { file: PathBuf },
    /// Print the built-in TCM schema.
    Builtin,
}

#[derive(Debug, Subcommand)]
enum EtlCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Warehouse directory overriding the one in the config.
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Fail when more rows than this are rejected in total.
        #[arg(long)]
        max_rejects: Option<u64>,
        /// Write every sampled reject as JSON lines to this file.
        #[arg(long)]
        rejects: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: TextOrJson,
    },
}

#[derive(Debug, Subcommand)]
enum CubeCmd {
    Build {
        #[arg(long, env = "TCMDW_DIR")]
        dir: PathBuf,
        /// `default`, `full` or `k=<n>`.
        #[arg(long, default_value = "default")]
        policy: String,
        /// Worker threads; all available cores when omitted.
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
enum ReportCmd {
    Render {
        #[arg(long, env = "TCMDW_DIR")]
        dir: PathBuf,
        #[arg(long)]
        name: String,
        /// `key=value`, repeatable.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, String)>,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormatArg,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List report templates and their parameters.
    List,
}

#[derive(Debug, Subcommand)]
enum CatalogCmd {
    Show {
        #[arg(long, env = "TCMDW_DIR")]
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: TextOrJson,
    },
}

#[derive(Debug, Subcommand)]
enum LineageCmd {
    Show {
        #[arg(long, env = "TCMDW_DIR")]
        dir: PathBuf,
        #[arg(long)]
        batch: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: TextOrJson,
    },
}

fn parse_param(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("`{s}` is not key=value"))
}

/// Runs the command line with the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    ExitStatus::Success as i32
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    ExitStatus::Usage as i32
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => ExitStatus::Success as i32,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.status as i32
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult {
    out.write_all(text.as_bytes()).map_err(CliError::env)?;
    if !text.is_empty() && !text.ends_with('\n') {
        out.write_all(b"\n").map_err(CliError::env)?;
    }
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::env(format!("{}: {e}", path.display())))
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Schema(SchemaCmd::Validate { file }) => schema_validate(&file, out),
        Command::Schema(SchemaCmd::Builtin) => emit(out, &model::schema_to_string(&model::builtin_tcm_schema())),
        Command::Init { schema, dir } => {
            let schema = match schema {
                Some(p) => model::parse_schema(&read_text(&p)?)?,
                None => model::builtin_tcm_schema(),
            };
            let report = model::validate_schema(&schema);
            if !report.valid() {
                for i in report.issues.iter().filter(|i| i.severity == Severity::Error) {
                    let _ = writeln!(err, "{} at {}: {}", i.code, i.location, i.message);
                }
                return Err(CliError::data(format!("schema has {} errors", report.error_count())));
            }
            let wh = storage::init_warehouse(schema, &dir)?;
            emit(out, &format!("initialized {} at checkpoint {}", dir.display(), wh.checkpoint_digest().unwrap_or("")))
        }
        Command::Datagen { config, out: out_dir, print_config } => {
            if print_config {
                let mut text = serde_json::to_string_pretty(&GenConfig::default()).expect("config serializes");
                text.push('\n');
                return emit(out, &text);
            }
            let cfg = match config {
                Some(p) => datagen::read_gen_config(&p)?,
                None => GenConfig::default(),
            };
            let out_dir = out_dir.expect("required by clap");
            let manifest = datagen::generate_dataset(&cfg, &out_dir)?;
            emit(
                out,
                &format!(
                    "generated {} prescriptions, {} facts in {} (manifest {})",
                    manifest.n_prescriptions,
                    manifest.fact_count,
                    out_dir.display(),
                    manifest.digest()
                ),
            )
        }
        Command::Etl(EtlCmd::Run { config, dir, max_rejects, rejects, format }) => {
            etl_run(&config, dir, max_rejects, rejects.as_deref(), format, out)
        }
        Command::Cube(CubeCmd::Build { dir, policy, workers }) => {
            let policy = MaterializationPolicy::parse(&policy)?;
            let workers = workers
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
                .max(1);
            let wh = storage::open_warehouse_for_write(&dir)?;
            let started = std::time::Instant::now();
            let cube = cube::build_cube(&wh, &policy, workers)?;
            let path = cube::save_cube(&cube, &dir)?;
            emit(
                out,
                &format!(
                    "built {} cuboids, {} cells in {:.2}s with {workers} workers into {}",
                    cube.materialized().count(),
                    cube.total_cells(),
                    started.elapsed().as_secs_f64(),
                    path.display()
                ),
            )
        }
        Command::Query { dir, spec, oracle, format } => {
            let spec: QuerySpec = serde_json::from_str(&read_text(&spec)?)
                .map_err(|e| CliError::data(format!("{}: {e}", spec.display())))?;
            let wh = storage::open_warehouse(&dir)?;
            let rs = if oracle {
                cube::oracle_query(&wh, &spec)?
            } else {
                let c = cube::load_cube_for(&wh, std::slice::from_ref(&spec))?;
                c.query(wh.schema(), &spec)?
            };
            let text = match format {
                QueryFormat::Table => rs.render_table(),
                QueryFormat::Csv => rs.render_csv(),
                QueryFormat::Json => rs.render_json(),
            };
            emit(out, &text)
        }
        Command::Report(ReportCmd::List) => {
            let mut text = String::new();
            for t in report::builtin_report_defs() {
                text.push_str(&format!("{}: {}\n", t.name, t.description));
                for p in t.params {
                    let default = p.default.map(|d| format!(" (default {d})")).unwrap_or_default();
                    let req = if p.required { " required" } else { "" };
                    text.push_str(&format!("  {}{req}{default}: {}\n", p.name, p.description));
                }
            }
            emit(out, &text)
        }
        Command::Report(ReportCmd::Render { dir, name, params, format, out: file }) => {
            let def = ReportDef { name, params: params.into_iter().collect() };
            let wh = storage::open_warehouse(&dir)?;
            let c = cube::load_cube_for(&wh, &report::report_plan(&def)?)?;
            let rendered = report::render_report(&c, &wh, &def, format.into())?;
            match file {
                Some(path) => {
                    fs::write(&path, rendered.content.as_bytes())
                        .map_err(|e| CliError::env(format!("{}: {e}", path.display())))?;
                    let _ = writeln!(err, "wrote {}", path.display());
                    Ok(())
                }
                None => emit(out, &rendered.content),
            }
        }
        Command::Catalog(CatalogCmd::Show { dir, format }) => {
            let wh = storage::open_warehouse(&dir)?;
            let dict = metadata::data_dictionary(&wh);
            match format {
                TextOrJson::Text => emit(out, &dict.render_text()),
                TextOrJson::Json => emit(out, &serde_json::to_string_pretty(&dict).expect("dictionary serializes")),
            }
        }
        Command::Lineage(LineageCmd::Show { dir, batch, format }) => {
            let wh = storage::open_warehouse(&dir)?;
            let records: Vec<&metadata::LineageRecord> = match &batch {
                Some(b) => vec![metadata::get_lineage(&wh, b)?],
                None => wh.lineage().iter().collect(),
            };
            match format {
                TextOrJson::Json => {
                    emit(out, &serde_json::to_string_pretty(&records).expect("lineage serializes"))
                }
                TextOrJson::Text => {
                    let columns =
                        ["batch_id", "target", "rows_in", "rows_out", "rejected", "skipped", "inferred", "finished", "source"];
                    let rows: Vec<Vec<String>> = records
                        .iter()
                        .map(|r| {
                            vec![
                                r.batch_id.clone(),
                                r.target.clone(),
                                r.rows_in.to_string(),
                                r.rows_out.to_string(),
                                r.rows_rejected.to_string(),
                                r.rows_skipped.to_string(),
                                r.inferred_members.to_string(),
                                r.finished.clone(),
                                r.source_uri.clone(),
                            ]
                        })
                        .collect();
                    emit(out, &report::render_aligned(&columns, &rows))
                }
            }
        }
    }
}

fn schema_validate(file: &Path, out: &mut dyn Write) -> CliResult {
    let text = read_text(file)?;
    let schema = match model::parse_schema(&text) {
        Ok(s) => s,
        Err(e) => {
            emit(out, &format!("error {}\n1 errors", e))?;
            return Err(CliError::data("schema could not be parsed"));
        }
    };
    let report = model::validate_schema(&schema);
    let mut text = String::new();
    for i in &report.issues {
        let sev = match i.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        text.push_str(&format!("{sev} {} at {}: {}\n", i.code, i.location, i.message));
    }
    if report.warning_count() > 0 {
        text.push_str(&format!("{} warnings\n", report.warning_count()));
    }
    text.push_str(&format!("{} errors\n", report.error_count()));
    emit(out, &text)?;
    if report.valid() {
        Ok(())
    } else {
        Err(CliError::data(format!("{} is not a valid schema", file.display())))
    }
}

fn etl_run(
    config: &Path,
    dir: Option<PathBuf>,
    max_rejects: Option<u64>,
    rejects: Option<&Path>,
    format: TextOrJson,
    out: &mut dyn Write,
) -> CliResult {
    if !config.exists() {
        return Err(CliError::env(format!("{}: no such file", config.display())));
    }
    let mut cfg = etl::read_pipeline_config(config)?;
    let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(d) = dir {
        cfg.warehouse = std::env::current_dir().map_err(CliError::env)?.join(d);
    }
    let report = etl::run_pipeline_config(&cfg, &base)?;

    if let Some(path) = rejects {
        let mut buf = Vec::new();
        for s in &report.sources {
            for r in s.report.iter().flat_map(|r| &r.reject_sample) {
                let line = serde_json::json!({ "batch_id": s.batch_id, "reject": r });
                buf.extend_from_slice(line.to_string().as_bytes());
                buf.push(b'\n');
            }
        }
        fs::write(path, buf).map_err(|e| CliError::env(format!("{}: {e}", path.display())))?;
    }

    match format {
        TextOrJson::Json => emit(out, &serde_json::to_string_pretty(&report).expect("report serializes"))?,
        TextOrJson::Text => {
            let mut text = String::new();
            for s in &report.sources {
                let status = match s.status {
                    SourceStatus::Loaded => "loaded",
                    SourceStatus::SkippedDuplicateBatch => "skipped",
                    SourceStatus::Failed => "failed",
                };
                text.push_str(&format!("{status:<8} {}", s.batch_id));
                if let Some(r) = &s.report {
                    text.push_str(&format!(
                        " -> {}: in={} inserted={} rejected={} skipped={} inferred={}",
                        r.target, r.rows_in, r.inserted, r.rejected, r.skipped_duplicate_batch, r.inferred_members
                    ));
                }
                if let Some(e) = &s.error {
                    text.push_str(&format!(": {e}"));
                }
                text.push('\n');
            }
            text.push_str(&format!("facts={} checkpoint={}\n", report.fact_count, report.checkpoint));
            emit(out, &text)?;
        }
    }

    if report.failed() > 0 {
        return Err(CliError::data(format!("{} source(s) failed", report.failed())));
    }
    if let Some(max) = max_rejects {
        if report.total_rejected() > max {
            return Err(CliError::data(format!("{} rows rejected, limit {max}", report.total_rejected())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(std::iter::once("tcmdw").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run_capture(&["frobnicate"]).0, 3);
        assert_eq!(run_capture(&["query", "--bogus"]).0, 3);
    }

    #[test]
    fn missing_etl_config_is_environment_error() {
        let (code, out, err) = run_capture(&["etl", "run", "--config", "/nonexistent/pipeline.json"]);
        assert_eq!(code, 2);
        assert!(out.is_empty());
        assert!(err.contains("pipeline.json"));
    }

    #[test]
    fn builtin_schema_validates_with_zero_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        fs::write(&path, model::schema_to_string(&model::builtin_tcm_schema())).unwrap();
        let (code, out, _) = run_capture(&["schema", "validate", path.to_str().unwrap()]);
        assert_eq!(code, 0);
        assert!(out.lines().any(|l| l == "0 errors"), "{out}");
    }

    #[test]
    fn bad_param_syntax_is_usage_error() {
        let (code, _, _) = run_capture(&["report", "render", "--dir", "/tmp", "--name", "x", "--param", "novalue"]);
        assert_eq!(code, 3);
    }
}
