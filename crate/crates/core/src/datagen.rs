//! Seeded generator of synthetic TCM source files.
//!
//! The default catalog is fixture data for exercising the warehouse. Formula
//! compositions and quantities are synthetic and carry no medical meaning.
//!
//! Random draws come from splitmix64:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! return z ^ (z >> 31)
//! ```
//!
//! Per prescription, in order: year, day of year, formula, source, then one
//! noise draw per ingredient. `below(n)` rejects draws in the top partial
//! block of the 64-bit range so every outcome is equally likely.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::numeric::{div_round_half_up, CalendarDate, Decimal};
use crate::storage::{sha256_hex, INFERRED, UNKNOWN};

pub const FACTS_FILE: &str = "facts.csv";
pub const MANIFEST_FILE: &str = "gen_manifest.json";
pub const FACT_COLUMNS: [&str; 6] = ["prescription_id", "date", "formula", "herb", "source", "quantity_mg"];

/// Noise factor bounds in parts per million, inclusive.
const NOISE_MIN_PPM: i128 = 900_000;
const NOISE_MAX_PPM: i128 = 1_100_000;
const PPM: i128 = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("output directory {0} is not empty")]
    PathNotEmpty(PathBuf),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = DatagenError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < limit {
                return v % n;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Described {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountryDef {
    pub name: String,
    pub region: String,
    pub multiplier: f64,
    /// Herb → multiplier replacing `multiplier` for that herb.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub herb_multipliers: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDef {
    pub name: String,
    pub city: String,
    pub source_type: String,
    pub country: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HerbDef {
    pub name: String,
    pub latin_name: String,
    pub herb_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ingredient {
    pub herb: String,
    pub base_mg: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulaDef {
    pub name: String,
    pub formula_type: String,
    pub indication: String,
    pub ingredients: Vec<Ingredient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub n_prescriptions: u64,
    pub years: Vec<i32>,
    pub countries: Vec<CountryDef>,
    pub source_types: Vec<Described>,
    pub sources: Vec<SourceDef>,
    pub formula_types: Vec<Described>,
    pub herb_types: Vec<Described>,
    pub herbs: Vec<HerbDef>,
    pub formula_catalog: Vec<FormulaDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedFile {
    pub name: String,
    pub sha256: String,
    pub rows: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenManifest {
    pub seed: u64,
    pub n_prescriptions: u64,
    pub config_digest: String,
    pub fact_count: u64,
    pub files: Vec<GeneratedFile>,
}

impl GenManifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = serde_json::to_vec_pretty(self).expect("manifest serializes");
        b.push(b'\n');
        b
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

/// Multiplier as integer parts per million, rounded half up.
fn ppm(m: f64) -> Option<i128> {
    let d = Decimal::parse(&m.to_string())?;
    let v = d.checked_mul(Decimal::from_int(PPM as i64))?.round_half_up()?;
    (v > 0).then_some(v as i128)
}

fn described(name: &str, description: &str) -> Described {
    Described { name: name.into(), description: description.into() }
}

fn ingredients(items: &[(&str, u64)]) -> Vec<Ingredient> {
    items.iter().map(|(h, mg)| Ingredient { herb: (*h).into(), base_mg: *mg }).collect()
}

impl Default for GenConfig {
    fn default() -> Self {
        let country = |name: &str, region: &str, multiplier: f64, overrides: &[(&str, f64)]| CountryDef {
            name: name.into(),
            region: region.into(),
            multiplier,
            herb_multipliers: overrides.iter().map(|(h, m)| ((*h).into(), *m)).collect(),
        };
        let source = |name: &str, city: &str, t: &str, c: &str| SourceDef {
            name: name.into(),
            city: city.into(),
            source_type: t.into(),
            country: c.into(),
        };
        let herb = |name: &str, latin: &str, t: &str| HerbDef {
            name: name.into(),
            latin_name: latin.into(),
            herb_type: t.into(),
        };
        let formula = |name: &str, t: &str, ind: &str, items: &[(&str, u64)]| FormulaDef {
            name: name.into(),
            formula_type: t.into(),
            indication: ind.into(),
            ingredients: ingredients(items),
        };
        GenConfig {
            seed: 42,
            n_prescriptions: 10_000,
            years: vec![2008, 2009, 2010, 2011, 2012],
            countries: vec![
                country("China", "East Asia", 1.2, &[("Ge Gen", 1.5), ("Ma Huang", 1.0)]),
                country("Japan", "East Asia", 1.0, &[]),
                country("South Korea", "East Asia", 0.95, &[]),
                country("United Kingdom", "Europe", 0.9, &[]),
                country("United States", "North America", 0.85, &[("Ge Gen", 0.8)]),
            ],
            source_types: vec![
                described("Hospital", "inpatient and outpatient hospital department"),
                described("Clinic", "private practice clinic"),
                described("Pharmacy", "dispensing pharmacy"),
            ],
            sources: vec![
                source("Beijing TCM Hospital", "Beijing", "Hospital", "China"),
                source("Guangzhou Herbal Clinic", "Guangzhou", "Clinic", "China"),
                source("Chengdu Herb Pharmacy", "Chengdu", "Pharmacy", "China"),
                source("Tokyo Kampo Clinic", "Tokyo", "Clinic", "Japan"),
                source("Osaka Kampo Pharmacy", "Osaka", "Pharmacy", "Japan"),
                source("Seoul Oriental Hospital", "Seoul", "Hospital", "South Korea"),
                source("Busan Herbal Clinic", "Busan", "Clinic", "South Korea"),
                source("London Acupuncture Clinic", "London", "Clinic", "United Kingdom"),
                source("Manchester Herb Pharmacy", "Manchester", "Pharmacy", "United Kingdom"),
                source("San Francisco TCM Clinic", "San Francisco", "Clinic", "United States"),
                source("New York Integrative Hospital", "New York", "Hospital", "United States"),
            ],
            formula_types: vec![
                described("Cold and Flu", "release the exterior; used for common cold and flu"),
                described("Tonify Qi", "strengthen qi and digestion"),
                described("Tonify Blood", "nourish and regulate blood"),
                described("Tonify Yin", "nourish yin"),
                described("Harmonize", "harmonize liver and spleen"),
            ],
            herb_types: vec![
                described("Release Exterior", "herbs that release the exterior"),
                described("Tonify", "tonifying herbs"),
                described("Clear Heat", "herbs that clear heat"),
                described("Drain Dampness", "herbs that drain dampness"),
                described("Stop Cough", "herbs that stop cough"),
                described("Regulate Blood", "herbs that regulate blood"),
                described("Astringent", "astringent herbs"),
            ],
            herbs: vec![
                herb("Ge Gen", "Puerariae Radix", "Release Exterior"),
                herb("Ma Huang", "Ephedrae Herba", "Release Exterior"),
                herb("Gui Zhi", "Cinnamomi Ramulus", "Release Exterior"),
                herb("Sheng Jiang", "Zingiberis Rhizoma Recens", "Release Exterior"),
                herb("Bo He", "Menthae Haplocalycis Herba", "Release Exterior"),
                herb("Niu Bang Zi", "Arctii Fructus", "Release Exterior"),
                herb("Chai Hu", "Bupleuri Radix", "Release Exterior"),
                herb("Bai Shao", "Paeoniae Radix Alba", "Tonify"),
                herb("Da Zao", "Jujubae Fructus", "Tonify"),
                herb("Zhi Gan Cao", "Glycyrrhizae Radix Praeparata", "Tonify"),
                herb("Gan Cao", "Glycyrrhizae Radix", "Tonify"),
                herb("Ren Shen", "Ginseng Radix", "Tonify"),
                herb("Bai Zhu", "Atractylodis Macrocephalae Rhizoma", "Tonify"),
                herb("Shu Di Huang", "Rehmanniae Radix Praeparata", "Tonify"),
                herb("Dang Gui", "Angelicae Sinensis Radix", "Tonify"),
                herb("Shan Yao", "Dioscoreae Rhizoma", "Tonify"),
                herb("Jin Yin Hua", "Lonicerae Japonicae Flos", "Clear Heat"),
                herb("Lian Qiao", "Forsythiae Fructus", "Clear Heat"),
                herb("Mu Dan Pi", "Moutan Cortex", "Clear Heat"),
                herb("Fu Ling", "Poria", "Drain Dampness"),
                herb("Ze Xie", "Alismatis Rhizoma", "Drain Dampness"),
                herb("Xing Ren", "Armeniacae Semen Amarum", "Stop Cough"),
                herb("Jie Geng", "Platycodonis Radix", "Stop Cough"),
                herb("Chuan Xiong", "Chuanxiong Rhizoma", "Regulate Blood"),
                herb("Shan Zhu Yu", "Corni Fructus", "Astringent"),
            ],
            formula_catalog: vec![
                formula(
                    "Ge Gen Tang",
                    "Cold and Flu",
                    "common cold and flu with stiff neck",
                    &[
                        ("Ge Gen", 12_000),
                        ("Ma Huang", 9_000),
                        ("Gui Zhi", 6_000),
                        ("Bai Shao", 6_000),
                        ("Sheng Jiang", 9_000),
                        ("Da Zao", 4_000),
                        ("Zhi Gan Cao", 6_000),
                    ],
                ),
                formula(
                    "Gui Zhi Tang",
                    "Cold and Flu",
                    "wind-cold with sweating",
                    &[("Gui Zhi", 9_000), ("Bai Shao", 9_000), ("Sheng Jiang", 9_000), ("Da Zao", 4_000), ("Zhi Gan Cao", 6_000)],
                ),
                formula(
                    "Ma Huang Tang",
                    "Cold and Flu",
                    "wind-cold without sweating",
                    &[("Ma Huang", 9_000), ("Gui Zhi", 6_000), ("Xing Ren", 9_000), ("Zhi Gan Cao", 3_000)],
                ),
                formula(
                    "Yin Qiao San",
                    "Cold and Flu",
                    "wind-heat with sore throat",
                    &[
                        ("Jin Yin Hua", 9_000),
                        ("Lian Qiao", 9_000),
                        ("Jie Geng", 6_000),
                        ("Bo He", 6_000),
                        ("Niu Bang Zi", 9_000),
                        ("Gan Cao", 5_000),
                    ],
                ),
                formula(
                    "Si Jun Zi Tang",
                    "Tonify Qi",
                    "fatigue and poor appetite",
                    &[("Ren Shen", 9_000), ("Bai Zhu", 9_000), ("Fu Ling", 9_000), ("Zhi Gan Cao", 6_000)],
                ),
                formula(
                    "Si Wu Tang",
                    "Tonify Blood",
                    "blood deficiency",
                    &[("Shu Di Huang", 12_000), ("Dang Gui", 9_000), ("Bai Shao", 9_000), ("Chuan Xiong", 6_000)],
                ),
                formula(
                    "Xiao Yao San",
                    "Harmonize",
                    "stress and irritability",
                    &[
                        ("Chai Hu", 9_000),
                        ("Dang Gui", 9_000),
                        ("Bai Shao", 9_000),
                        ("Bai Zhu", 9_000),
                        ("Fu Ling", 9_000),
                        ("Zhi Gan Cao", 4_500),
                        ("Bo He", 3_000),
                        ("Sheng Jiang", 3_000),
                    ],
                ),
                formula(
                    "Liu Wei Di Huang Wan",
                    "Tonify Yin",
                    "yin deficiency",
                    &[
                        ("Shu Di Huang", 24_000),
                        ("Shan Zhu Yu", 12_000),
                        ("Shan Yao", 12_000),
                        ("Ze Xie", 9_000),
                        ("Mu Dan Pi", 9_000),
                        ("Fu Ling", 9_000),
                    ],
                ),
            ],
        }
    }
}

fn invalid(msg: impl Into<String>) -> DatagenError {
    DatagenError::InvalidConfig(msg.into())
}

fn unique_names<'a>(what: &str, names: impl Iterator<Item = &'a str>) -> Result<BTreeSet<&'a str>> {
    let mut set = BTreeSet::new();
    for n in names {
        if n.trim().is_empty() {
            return Err(invalid(format!("empty {what} name")));
        }
        if n == UNKNOWN || n == INFERRED {
            return Err(invalid(format!("{what} name `{n}` is reserved")));
        }
        if !set.insert(n) {
            return Err(invalid(format!("{what} `{n}` listed twice")));
        }
    }
    Ok(set)
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.formula_catalog.is_empty() {
            return Err(invalid("formula_catalog is empty"));
        }
        if self.years.is_empty() || self.years.iter().any(|y| !(1..=9999).contains(y)) {
            return Err(invalid("years must be a non-empty list of years in 1..=9999"));
        }
        if self.sources.is_empty() {
            return Err(invalid("no sources"));
        }
        let countries = unique_names("country", self.countries.iter().map(|c| c.name.as_str()))?;
        let source_types = unique_names("source type", self.source_types.iter().map(|t| t.name.as_str()))?;
        unique_names("source", self.sources.iter().map(|s| s.name.as_str()))?;
        let formula_types = unique_names("formula type", self.formula_types.iter().map(|t| t.name.as_str()))?;
        let herb_types = unique_names("herb type", self.herb_types.iter().map(|t| t.name.as_str()))?;
        let herbs = unique_names("herb", self.herbs.iter().map(|h| h.name.as_str()))?;
        unique_names("formula", self.formula_catalog.iter().map(|f| f.name.as_str()))?;

        for c in &self.countries {
            if !c.multiplier.is_finite() || c.multiplier <= 0.0 || ppm(c.multiplier).is_none() {
                return Err(invalid(format!("country `{}`: multiplier must be > 0", c.name)));
            }
            for (h, m) in &c.herb_multipliers {
                if !herbs.contains(h.as_str()) {
                    return Err(invalid(format!("country `{}`: unknown herb `{h}`", c.name)));
                }
                if !m.is_finite() || *m <= 0.0 || ppm(*m).is_none() {
                    return Err(invalid(format!("country `{}`: multiplier for `{h}` must be > 0", c.name)));
                }
            }
        }
        for s in &self.sources {
            if !countries.contains(s.country.as_str()) {
                return Err(invalid(format!("source `{}`: unknown country `{}`", s.name, s.country)));
            }
            if !source_types.contains(s.source_type.as_str()) {
                return Err(invalid(format!("source `{}`: unknown source type `{}`", s.name, s.source_type)));
            }
        }
        for h in &self.herbs {
            if !herb_types.contains(h.herb_type.as_str()) {
                return Err(invalid(format!("herb `{}`: unknown herb type `{}`", h.name, h.herb_type)));
            }
        }
        for f in &self.formula_catalog {
            if !formula_types.contains(f.formula_type.as_str()) {
                return Err(invalid(format!("formula `{}`: unknown formula type `{}`", f.name, f.formula_type)));
            }
            if f.ingredients.is_empty() {
                return Err(invalid(format!("formula `{}` has no ingredients", f.name)));
            }
            let mut seen = BTreeSet::new();
            for i in &f.ingredients {
                if !herbs.contains(i.herb.as_str()) {
                    return Err(invalid(format!("formula `{}`: unknown herb `{}`", f.name, i.herb)));
                }
                if i.base_mg < 1 {
                    return Err(invalid(format!("formula `{}`: `{}` base quantity must be >= 1 mg", f.name, i.herb)));
                }
                if !seen.insert(i.herb.as_str()) {
                    return Err(invalid(format!("formula `{}`: `{}` listed twice", f.name, i.herb)));
                }
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_value(self).expect("config serializes").to_string().as_bytes())
    }
}

pub fn read_gen_config(path: &Path) -> Result<GenConfig> {
    let text = fs::read_to_string(path).map_err(|source| DatagenError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))
}

struct CsvOut {
    writer: csv::Writer<Vec<u8>>,
    rows: u64,
}

impl CsvOut {
    fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        CsvOut { writer, rows: 0 }
    }

    fn row<I, T>(&mut self, fields: I)
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
        self.rows += 1;
    }

    fn finish(self) -> (Vec<u8>, u64) {
        (self.writer.into_inner().expect("in-memory flush"), self.rows)
    }
}

/// File name → (bytes, data rows).
pub type RenderedFiles = BTreeMap<String, (Vec<u8>, u64)>;

/// Every output except the manifest, plus the fact row count.
pub fn render_dataset(cfg: &GenConfig) -> Result<(RenderedFiles, u64)> {
    cfg.validate()?;
    let mut files = BTreeMap::new();
    let mut put = |table: &str, out: CsvOut| {
        files.insert(format!("seed_{table}.csv"), out.finish());
    };

    let mut years: Vec<i32> = cfg.years.clone();
    years.sort_unstable();
    years.dedup();

    let mut dates = CsvOut::new(&["day", "month", "quarter", "year"]);
    for &y in &years {
        for o in 0..CalendarDate::days_in_year(y) {
            let d = CalendarDate::from_ordinal(y, o).expect("ordinal in range");
            dates.row([d.compact(), d.month_key(), d.quarter_key(), d.year_key()]);
        }
    }
    put("Dates", dates);

    let mut t = CsvOut::new(&["formula_type", "formula_type_description"]);
    cfg.formula_types.iter().for_each(|d| t.row([&d.name, &d.description]));
    put("FormulaTypes", t);
    let mut t = CsvOut::new(&["formula", "indication", "formula_type"]);
    cfg.formula_catalog.iter().for_each(|f| t.row([&f.name, &f.indication, &f.formula_type]));
    put("Formulas", t);
    let mut t = CsvOut::new(&["herb_type", "herb_type_description"]);
    cfg.herb_types.iter().for_each(|d| t.row([&d.name, &d.description]));
    put("HerbTypes", t);
    let mut t = CsvOut::new(&["herb", "latin_name", "herb_type"]);
    cfg.herbs.iter().for_each(|h| t.row([&h.name, &h.latin_name, &h.herb_type]));
    put("Herbs", t);
    let mut t = CsvOut::new(&["source_type", "source_type_description"]);
    cfg.source_types.iter().for_each(|d| t.row([&d.name, &d.description]));
    put("SourceTypes", t);
    let mut t = CsvOut::new(&["country", "region"]);
    cfg.countries.iter().for_each(|c| t.row([&c.name, &c.region]));
    put("Countries", t);
    let mut t = CsvOut::new(&["source", "city", "source_type", "country"]);
    cfg.sources.iter().for_each(|s| t.row([&s.name, &s.city, &s.source_type, &s.country]));
    put("Sources", t);

    // Per source, the multiplier (ppm) for each ingredient of each formula.
    let country: BTreeMap<&str, &CountryDef> = cfg.countries.iter().map(|c| (c.name.as_str(), c)).collect();
    let multipliers: Vec<Vec<Vec<i128>>> = cfg
        .sources
        .iter()
        .map(|s| {
            let c = country[s.country.as_str()];
            let base = ppm(c.multiplier).expect("validated");
            cfg.formula_catalog
                .iter()
                .map(|f| {
                    f.ingredients
                        .iter()
                        .map(|i| c.herb_multipliers.get(&i.herb).map_or(base, |m| ppm(*m).expect("validated")))
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut rng = SplitMix64::new(cfg.seed);
    let mut facts = CsvOut::new(&FACT_COLUMNS);
    for p in 0..cfg.n_prescriptions {
        let year = years[rng.below(years.len() as u64) as usize];
        let ordinal = rng.below(CalendarDate::days_in_year(year) as u64) as u32;
        let f = rng.below(cfg.formula_catalog.len() as u64) as usize;
        let s = rng.below(cfg.sources.len() as u64) as usize;
        let date = CalendarDate::from_ordinal(year, ordinal).expect("ordinal in range");
        let date = format!("{:04}-{}-{}", year, &date.compact()[4..6], &date.compact()[6..8]);
        let id = format!("P{:07}", p + 1);
        let formula = &cfg.formula_catalog[f];
        for (i, ing) in formula.ingredients.iter().enumerate() {
            let noise = NOISE_MIN_PPM + rng.below((NOISE_MAX_PPM - NOISE_MIN_PPM + 1) as u64) as i128;
            let q = div_round_half_up(ing.base_mg as i128 * multipliers[s][f][i] * noise, PPM * PPM).max(1);
            facts.row([id.as_str(), &date, &formula.name, &ing.herb, &cfg.sources[s].name, &q.to_string()]);
        }
    }
    let (bytes, fact_count) = facts.finish();
    files.insert(FACTS_FILE.to_string(), (bytes, fact_count));
    Ok((files, fact_count))
}

/// Writes seed files, the fact file and `gen_manifest.json` into `out_dir`.
pub fn generate_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<GenManifest> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatagenError::Io { path, source }
    };
    if out_dir.exists() {
        let mut entries = fs::read_dir(out_dir).map_err(io(out_dir))?;
        if entries.next().is_some() {
            return Err(DatagenError::PathNotEmpty(out_dir.into()));
        }
    }
    let (files, fact_count) = render_dataset(cfg)?;
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut listed = Vec::new();
    for (name, (bytes, rows)) in &files {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(io(&path))?;
        listed.push(GeneratedFile { name: name.clone(), sha256: sha256_hex(bytes), rows: *rows });
    }
    let manifest = GenManifest {
        seed: cfg.seed,
        n_prescriptions: cfg.n_prescriptions,
        config_digest: cfg.digest(),
        fact_count,
        files: listed,
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_bytes()).map_err(io(&path))?;
    Ok(manifest)
}
