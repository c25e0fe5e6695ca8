#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use tcmdw_core::datagen::{self, GenConfig, GenManifest};
use tcmdw_core::etl::{self, PipelineReport};
use tcmdw_core::model::builtin_tcm_schema;
use tcmdw_core::storage;

pub fn repo_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// A scratch layout mirroring the repo: `configs/`, `data/`, `warehouse/`.
pub struct Workspace {
    pub tmp: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        fs::create_dir_all(tmp.path().join("configs")).unwrap();
        fs::copy(repo_configs().join("pipeline.json"), tmp.path().join("configs/pipeline.json")).unwrap();
        Workspace { tmp }
    }

    pub fn root(&self) -> &Path {
        self.tmp.path()
    }

    pub fn data(&self) -> PathBuf {
        self.root().join("data")
    }

    pub fn warehouse(&self) -> PathBuf {
        self.root().join("warehouse")
    }

    pub fn pipeline(&self) -> PathBuf {
        self.root().join("configs/pipeline.json")
    }
}

pub fn small_config(seed: u64, n: u64) -> GenConfig {
    GenConfig { seed, n_prescriptions: n, years: vec![2009, 2010], ..GenConfig::default() }
}

/// Generates data, initializes a warehouse and runs the shipped pipeline.
pub fn loaded(cfg: &GenConfig) -> (Workspace, GenManifest, PipelineReport) {
    let ws = Workspace::new();
    let manifest = datagen::generate_dataset(cfg, &ws.data()).unwrap();
    drop(storage::init_warehouse(builtin_tcm_schema(), &ws.warehouse()).unwrap());
    let report = etl::run_pipeline(&ws.pipeline()).unwrap();
    (ws, manifest, report)
}

/// Rows of a CSV file as header-keyed maps.
pub fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    rdr.records()
        .map(|r| header.iter().cloned().zip(r.unwrap().iter().map(String::from)).collect())
        .collect()
}

/// `num/den` rounded half away from zero to `places` decimals, computed with
/// plain integer arithmetic independently of the library.
pub fn ratio_string(num: i128, den: i128, places: u32) -> String {
    assert!(den != 0);
    let neg = (num < 0) != (den < 0);
    let (n, d) = (num.abs(), den.abs());
    let scale = 10i128.pow(places);
    let q = (2 * n * scale + d) / (2 * d);
    let int = q / scale;
    let frac = q % scale;
    let sign = if neg && q != 0 { "-" } else { "" };
    if places == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac:0width$}", width = places as usize)
    }
}
