//! Cube files under `<warehouse>/cube/<checkpoint digest>/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    validate_spec, Aggregate, Cube, CubeCell, CubeError, Cuboid, CuboidId, DimensionIndex, MaterializationPolicy, QuerySpec,
    Result,
};
use crate::storage::{sha256_hex, Warehouse};

const MANIFEST: &str = "cube_manifest.json";
const LEVELS: &str = "levels.json";

#[derive(Debug, Serialize, Deserialize)]
struct CubeManifest {
    schema_digest: String,
    source_checkpoint: String,
    policy: MaterializationPolicy,
    measures: Vec<String>,
    cuboids: Vec<CuboidEntry>,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CuboidEntry {
    id: String,
    levels: Vec<(String, String)>,
    file: String,
    cells: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LevelsFile {
    dimensions: Vec<DimensionTuples>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DimensionTuples {
    name: String,
    levels: Vec<String>,
    tuples: Vec<Vec<String>>,
}

pub fn cube_dir(warehouse_root: &Path, checkpoint: &str) -> PathBuf {
    warehouse_root.join("cube").join(checkpoint)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CubeError + '_ {
    move |source| CubeError::Io { path: path.to_path_buf(), source }
}

fn cuboid_file(id: &CuboidId) -> String {
    format!("cuboid_{id}.ndjson")
}

/// Every cube file name mapped to its exact bytes. Identical cubes serialize
/// identically.
pub fn serialize_cube(cube: &Cube) -> BTreeMap<String, Vec<u8>> {
    assert!(cube.is_complete(), "only a fully loaded cube can be serialized");
    let mut files = BTreeMap::new();

    let levels = LevelsFile {
        dimensions: cube
            .dims
            .iter()
            .map(|d| DimensionTuples { name: d.name.clone(), levels: d.level_names.clone(), tuples: d.tuples.clone() })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&levels).expect("levels serialize");
    bytes.push(b'\n');
    files.insert(LEVELS.to_string(), bytes);

    let mut entries = Vec::new();
    for (id, cuboid) in &cube.cuboids {
        let mut buf = Vec::new();
        for cell in &cuboid.cells {
            let mut obj = serde_json::Map::new();
            let coords: Vec<&str> = cube.cell_values(id, cell);
            obj.insert("coords".into(), serde_json::to_value(coords).expect("coords"));
            for (name, agg) in cube.measures.iter().zip(cell.aggregates.iter()) {
                obj.insert(name.clone(), serde_json::to_value(agg).expect("aggregate"));
            }
            serde_json::to_writer(&mut buf, &obj).expect("cell serializes");
            buf.push(b'\n');
        }
        let file = cuboid_file(id);
        entries.push(CuboidEntry {
            id: id.to_string(),
            levels: id.describe(&cube.layout),
            file: file.clone(),
            cells: cuboid.cells.len(),
        });
        files.insert(file, buf);
    }

    let manifest = CubeManifest {
        schema_digest: cube.schema_digest.clone(),
        source_checkpoint: cube.source_checkpoint.clone(),
        policy: cube.policy.clone(),
        measures: cube.measures.clone(),
        cuboids: entries,
        files: files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    files.insert(MANIFEST.to_string(), bytes);
    files
}

/// Writes the cube next to the warehouse it was built from and returns the
/// cube directory.
pub fn save_cube(cube: &Cube, warehouse_root: &Path) -> Result<PathBuf> {
    let dir = cube_dir(warehouse_root, &cube.source_checkpoint);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io(&dir))?;
    }
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let files = serialize_cube(cube);
    // Manifest last so a partially written cube never looks complete.
    for (name, bytes) in files.iter().filter(|(n, _)| n.as_str() != MANIFEST) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io(&path))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, &files[MANIFEST]).map_err(io(&path))?;
    Ok(dir)
}

struct CubeFiles {
    dir: PathBuf,
    manifest: CubeManifest,
}

impl CubeFiles {
    fn read(&self, name: &str) -> Result<Vec<u8>> {
        let expected =
            self.manifest.files.get(name).ok_or_else(|| CubeError::CorruptCube(format!("no digest for {name}")))?;
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(io(&path))?;
        if &sha256_hex(&bytes) != expected {
            return Err(CubeError::DigestMismatch(name.into()));
        }
        Ok(bytes)
    }
}

/// Reads the manifest and level dictionaries; no cuboid is loaded yet.
fn open_cube(wh: &Warehouse) -> Result<(Cube, CubeFiles)> {
    let root = wh.root().ok_or_else(|| CubeError::CorruptCube("warehouse has no directory".into()))?;
    let checkpoint = wh.checkpoint_digest().ok_or(CubeError::StaleWarehouse)?;
    let dir = cube_dir(root, checkpoint);
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(CubeError::Io {
            path: manifest_path,
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no cube for the current checkpoint; run `cube build`",
            ),
        });
    }
    let manifest: CubeManifest = serde_json::from_slice(&fs::read(&manifest_path).map_err(io(&manifest_path))?)
        .map_err(|e| CubeError::CorruptCube(e.to_string()))?;
    if manifest.source_checkpoint != checkpoint {
        return Err(CubeError::StaleCube { cube: manifest.source_checkpoint, warehouse: checkpoint.into() });
    }
    if manifest.schema_digest != wh.schema().digest() {
        return Err(CubeError::CorruptCube("schema digest differs from warehouse".into()));
    }
    let files = CubeFiles { dir, manifest };

    let layout = wh.layout().clone();
    let levels: LevelsFile =
        serde_json::from_slice(&files.read(LEVELS)?).map_err(|e| CubeError::CorruptCube(e.to_string()))?;
    if levels.dimensions.len() != layout.dimensions.len() {
        return Err(CubeError::CorruptCube("dimension count differs from schema".into()));
    }
    let dims: Vec<DimensionIndex> = layout
        .dimensions
        .iter()
        .zip(levels.dimensions)
        .map(|(d, t)| DimensionIndex::new(d, t.tuples))
        .collect::<Result<_>>()?;
    let sizes = files
        .manifest
        .cuboids
        .iter()
        .map(|e| Ok((e.id.parse::<CuboidId>()?, e.cells)))
        .collect::<Result<BTreeMap<_, _>>>()?;

    let cube = Cube {
        schema_digest: files.manifest.schema_digest.clone(),
        source_checkpoint: files.manifest.source_checkpoint.clone(),
        policy: files.manifest.policy.clone(),
        layout,
        measures: files.manifest.measures.clone(),
        dims,
        sizes,
        cuboids: BTreeMap::new(),
    };
    Ok((cube, files))
}

fn load_cuboid(cube: &Cube, files: &CubeFiles, id: &CuboidId) -> Result<Cuboid> {
    let entry = files
        .manifest
        .cuboids
        .iter()
        .find(|e| e.id == id.to_string())
        .ok_or_else(|| CubeError::NotLoaded(id.to_string()))?;
    let bytes = files.read(&entry.file)?;
    let mut cells = Vec::with_capacity(entry.cells);
    for line in bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_slice(line).map_err(|e| CubeError::CorruptCube(e.to_string()))?;
        let values: Vec<String> = obj
            .get("coords")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| CubeError::CorruptCube(format!("{}: missing coords", entry.file)))?;
        let coords = id
            .0
            .iter()
            .enumerate()
            .filter_map(|(d, l)| l.map(|l| (d, l)))
            .zip(&values)
            .map(|((d, l), v)| {
                cube.dims[d].code(l, v).ok_or_else(|| CubeError::CorruptCube(format!("unknown member `{v}`")))
            })
            .collect::<Result<Box<[u32]>>>()?;
        let aggregates = cube
            .measures
            .iter()
            .map(|m| {
                obj.get(m)
                    .and_then(|v| serde_json::from_value::<Aggregate>(v.clone()).ok())
                    .ok_or_else(|| CubeError::CorruptCube(format!("{}: missing measure {m}", entry.file)))
            })
            .collect::<Result<Box<[Aggregate]>>>()?;
        cells.push(CubeCell { coords, aggregates });
    }
    if cells.len() != entry.cells {
        return Err(CubeError::CorruptCube(format!("{}: cell count mismatch", entry.file)));
    }
    Ok(Cuboid { cells })
}

/// Loads the whole cube built from `wh`'s current checkpoint, verifying
/// every file digest.
pub fn load_cube(wh: &Warehouse) -> Result<Cube> {
    let (mut cube, files) = open_cube(wh)?;
    let ids: Vec<CuboidId> = cube.sizes.keys().cloned().collect();
    for id in ids {
        let c = load_cuboid(&cube, &files, &id)?;
        cube.cuboids.insert(id, c);
    }
    Ok(cube)
}

/// Loads only the cuboids that answer `specs`. The result can answer those
/// specs; other queries may fail with `NotLoaded`.
pub fn load_cube_for(wh: &Warehouse, specs: &[QuerySpec]) -> Result<Cube> {
    let (mut cube, files) = open_cube(wh)?;
    let mut ids = BTreeSet::new();
    for spec in specs {
        ids.insert(cube.route(&validate_spec(wh.schema(), &cube.layout, spec)?));
    }
    for id in ids {
        let c = load_cuboid(&cube, &files, &id)?;
        cube.cuboids.insert(id, c);
    }
    Ok(cube)
}
