//! Aggregation lattice materialization and multidimensional queries.
//!
//! A cuboid picks one level (or All) per fact dimension. Cells hold, per
//! measure, the additive aggregates sum/count/min/max; averages are derived at
//! query time. The base cuboid is aggregated from the facts, every other
//! cuboid from its smallest already-built finer ancestor.
//!
//! Member values are dictionary-encoded per (dimension, level) in sorted
//! order, so ordering cells by code is the same as ordering by value.

mod navigate;
mod persist;
mod query;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{SchemaDef, SchemaLayout, ALL_LEVEL};
use crate::storage::{StorageError, Warehouse};

pub use navigate::{navigate, NavAction};
pub use persist::{cube_dir, load_cube, load_cube_for, save_cube, serialize_cube};
pub use query::{
    cuboid_spec, oracle_query, validate_spec, AggKind, FilterSpec, GroupBySpec, MeasureSpec, QuerySpec, ResolvedSpec,
    ResultSet, Value, AVG_PLACES,
};

/// Lattices at or below this size are fully materialized by default.
pub const FULL_LATTICE_LIMIT: usize = 512;
/// Non-All level budget per cuboid for partial materialization by default.
pub const DEFAULT_MAX_LEVELS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum CubeError {
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("unknown level `{level}` in dimension `{dimension}`")]
    UnknownLevel { dimension: String, level: String },
    #[error("unknown hierarchy `{hierarchy}` in dimension `{dimension}`")]
    UnknownHierarchy { dimension: String, hierarchy: String },
    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),
    #[error("dimension `{0}` is grouped more than once")]
    DuplicateGroupBy(String),
    #[error("warehouse has changes that are not checkpointed")]
    StaleWarehouse,
    #[error("cube was built from checkpoint {cube} but the warehouse is at {warehouse}")]
    StaleCube { cube: String, warehouse: String },
    #[error("level `{to}` is not a function of level `{from}` in dimension `{dimension}`")]
    NonFunctionalHierarchy { dimension: String, from: String, to: String },
    #[error("dimension `{0}` is already at All")]
    AtApex(String),
    #[error("dimension `{0}` is already at its finest level")]
    AtBase(String),
    #[error("dimension `{0}` has several hierarchies through this level; name one")]
    AmbiguousHierarchy(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("corrupt cube: {0}")]
    CorruptCube(String),
    #[error("cuboid {0} is not loaded")]
    NotLoaded(String),
    #[error("digest mismatch for cube file {0}")]
    DigestMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

pub type Result<T, E = CubeError> = std::result::Result<T, E>;

/// One level choice per fact dimension; `None` is All.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CuboidId(pub Vec<Option<usize>>);

impl CuboidId {
    pub fn apex(layout: &SchemaLayout) -> Self {
        CuboidId(vec![None; layout.dimensions.len()])
    }

    pub fn base(layout: &SchemaLayout) -> Self {
        CuboidId(layout.dimensions.iter().map(|d| if d.levels.is_empty() { None } else { Some(0) }).collect())
    }

    pub fn non_all_levels(&self) -> usize {
        self.0.iter().filter(|l| l.is_some()).count()
    }

    /// `(dimension, level)` names, with "All" for unconstrained dimensions.
    pub fn describe(&self, layout: &SchemaLayout) -> Vec<(String, String)> {
        self.0
            .iter()
            .zip(&layout.dimensions)
            .map(|(l, d)| (d.name.clone(), l.map_or(ALL_LEVEL.to_string(), |i| d.levels[i].name.clone())))
            .collect()
    }
}

impl fmt::Display for CuboidId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.map_or("A".to_string(), |i| i.to_string())).collect();
        f.write_str(&parts.join("-"))
    }
}

impl FromStr for CuboidId {
    type Err = CubeError;

    fn from_str(s: &str) -> Result<Self> {
        s.split('-')
            .map(|p| match p {
                "A" => Ok(None),
                n => n.parse().map(Some).map_err(|_| CubeError::CorruptCube(format!("bad cuboid id `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(CuboidId)
    }
}

/// Every combination of per-dimension level choices (levels plus All).
pub fn enumerate_lattice(layout: &SchemaLayout) -> Vec<CuboidId> {
    let mut out = vec![CuboidId(Vec::new())];
    for d in &layout.dimensions {
        let choices: Vec<Option<usize>> = (0..d.levels.len()).map(Some).chain(std::iter::once(None)).collect();
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |c| {
                    let mut v = prefix.0.clone();
                    v.push(*c);
                    CuboidId(v)
                })
            })
            .collect();
    }
    out
}

pub fn enumerate_schema_lattice(schema: &SchemaDef) -> Result<Vec<CuboidId>> {
    let layout = SchemaLayout::new(schema).map_err(|e| CubeError::Storage(StorageError::InvalidSchema(e.to_string())))?;
    Ok(enumerate_lattice(&layout))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// Full lattice when small enough, otherwise `max_levels` 2.
    Default,
    Full,
    MaxLevels { k: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializationPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    /// Extra cuboids to materialize, as cuboid ids.
    #[serde(default)]
    pub explicit: Vec<String>,
}

impl Default for MaterializationPolicy {
    fn default() -> Self {
        MaterializationPolicy { kind: PolicyKind::Default, explicit: Vec::new() }
    }
}

impl MaterializationPolicy {
    pub fn full() -> Self {
        MaterializationPolicy { kind: PolicyKind::Full, explicit: Vec::new() }
    }

    pub fn max_levels(k: usize) -> Self {
        MaterializationPolicy { kind: PolicyKind::MaxLevels { k }, explicit: Vec::new() }
    }

    /// Parses `full`, `default` or `k=<n>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::full()),
            "default" => Ok(Self::default()),
            _ => s
                .strip_prefix("k=")
                .and_then(|n| n.parse().ok())
                .map(Self::max_levels)
                .ok_or_else(|| CubeError::InvalidPolicy(format!("expected full, default or k=<n>, got `{s}`"))),
        }
    }

    /// The cuboids this policy materializes; apex and base always included.
    pub fn select(&self, layout: &SchemaLayout) -> Result<BTreeSet<CuboidId>> {
        let lattice = enumerate_lattice(layout);
        let kind = match self.kind {
            PolicyKind::Default if lattice.len() <= FULL_LATTICE_LIMIT => PolicyKind::Full,
            PolicyKind::Default => PolicyKind::MaxLevels { k: DEFAULT_MAX_LEVELS },
            k => k,
        };
        let mut set: BTreeSet<CuboidId> = match kind {
            PolicyKind::Full => lattice.iter().cloned().collect(),
            PolicyKind::MaxLevels { k } => lattice.iter().filter(|c| c.non_all_levels() <= k).cloned().collect(),
            PolicyKind::Default => unreachable!(),
        };
        set.insert(CuboidId::apex(layout));
        set.insert(CuboidId::base(layout));
        for e in &self.explicit {
            let id: CuboidId = e.parse()?;
            if !lattice.contains(&id) {
                return Err(CubeError::InvalidPolicy(format!("cuboid `{e}` is not in the lattice")));
            }
            set.insert(id);
        }
        Ok(set)
    }
}

/// Additive aggregates of one measure over a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sum: i128,
    pub count: u64,
    pub min: i64,
    pub max: i64,
}

impl Aggregate {
    pub fn of(v: i64) -> Self {
        Aggregate { sum: v as i128, count: 1, min: v, max: v }
    }

    pub fn merge(&mut self, o: &Aggregate) {
        self.sum += o.sum;
        self.count += o.count;
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }
}

fn merge_all(into: &mut [Aggregate], from: &[Aggregate]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.merge(b);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubeCell {
    /// Level codes for the cuboid's non-All dimensions, in dimension order.
    pub coords: Box<[u32]>,
    /// One aggregate per schema measure.
    pub aggregates: Box<[Aggregate]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Cuboid {
    /// Sorted by `coords`; empty cells are absent.
    pub cells: Vec<CubeCell>,
}

/// Per-dimension dictionaries and roll-up maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct DimensionIndex {
    pub name: String,
    pub level_names: Vec<String>,
    /// Distinct member level-value tuples, sorted.
    pub tuples: Vec<Vec<String>>,
    /// Sorted distinct values per level.
    pub dictionaries: Vec<Vec<String>>,
    /// `(from, to)` → code map, for every level pair where `to` is a
    /// declared coarsening of `from` and the data agrees.
    pub rollups: BTreeMap<(usize, usize), Vec<u32>>,
    /// Longest position of each level across hierarchies; All ranks above.
    pub ranks: Vec<usize>,
}

impl DimensionIndex {
    pub(crate) fn new(layout: &crate::model::DimensionLayout, mut tuples: Vec<Vec<String>>) -> Result<Self> {
        tuples.sort();
        tuples.dedup();
        let n = layout.levels.len();
        let dictionaries: Vec<Vec<String>> = (0..n)
            .map(|l| {
                let set: BTreeSet<&String> = tuples.iter().map(|t| &t[l]).collect();
                set.into_iter().cloned().collect()
            })
            .collect();
        let code = |l: usize, v: &str| dictionaries[l].binary_search_by(|x| x.as_str().cmp(v)).expect("in dictionary") as u32;
        let mut rollups = BTreeMap::new();
        for from in 0..n {
            for to in 0..n {
                if from == to || !layout.rolls_up_to(from, to) {
                    continue;
                }
                let mut map = vec![u32::MAX; dictionaries[from].len()];
                let mut functional = true;
                for t in &tuples {
                    let (f, c) = (code(from, &t[from]), code(to, &t[to]));
                    let slot = &mut map[f as usize];
                    if *slot == u32::MAX {
                        *slot = c;
                    } else if *slot != c {
                        functional = false;
                        break;
                    }
                }
                if functional {
                    rollups.insert((from, to), map);
                } else if from == 0 {
                    return Err(CubeError::NonFunctionalHierarchy {
                        dimension: layout.name.clone(),
                        from: layout.levels[from].name.clone(),
                        to: layout.levels[to].name.clone(),
                    });
                }
            }
        }
        let ranks = (0..n)
            .map(|l| {
                layout.hierarchies.iter().filter_map(|(_, ls)| ls.iter().position(|&x| x == l)).max().unwrap_or(0)
            })
            .collect();
        Ok(DimensionIndex {
            name: layout.name.clone(),
            level_names: layout.levels.iter().map(|l| l.name.clone()).collect(),
            tuples,
            dictionaries,
            rollups,
            ranks,
        })
    }

    pub(crate) fn code(&self, level: usize, value: &str) -> Option<u32> {
        self.dictionaries[level].binary_search_by(|x| x.as_str().cmp(value)).ok().map(|i| i as u32)
    }

    pub(crate) fn can_derive(&self, from: usize, to: usize) -> bool {
        from == to || self.rollups.contains_key(&(from, to))
    }

    /// Maps a code at `from` to its code at `to`; requires `can_derive`.
    pub(crate) fn roll(&self, from: usize, to: usize, code: u32) -> u32 {
        if from == to {
            code
        } else {
            self.rollups[&(from, to)][code as usize]
        }
    }

    fn rank(&self, level: Option<usize>) -> usize {
        match level {
            Some(l) => self.ranks[l],
            None => self.ranks.iter().max().map_or(0, |m| m + 1),
        }
    }

    /// Whether a cuboid at `from` can produce a strictly coarser-or-equal `to`
    /// and sits strictly below it in rank when different.
    fn parent_ok(&self, from: Option<usize>, to: Option<usize>) -> bool {
        match (from, to) {
            (a, b) if a == b => true,
            (Some(_), None) => true,
            (Some(a), Some(b)) => self.can_derive(a, b) && self.ranks[a] < self.ranks[b],
            (None, _) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cube {
    pub schema_digest: String,
    pub source_checkpoint: String,
    pub policy: MaterializationPolicy,
    pub(crate) layout: SchemaLayout,
    pub(crate) measures: Vec<String>,
    pub(crate) dims: Vec<DimensionIndex>,
    /// Cell count of every materialized cuboid, loaded or not.
    pub(crate) sizes: BTreeMap<CuboidId, usize>,
    /// Cuboids held in memory; a subset of `sizes` after a partial load.
    pub(crate) cuboids: BTreeMap<CuboidId, Cuboid>,
}

impl Cube {
    pub fn layout(&self) -> &SchemaLayout {
        &self.layout
    }

    pub fn measures(&self) -> &[String] {
        &self.measures
    }

    pub fn materialized(&self) -> impl Iterator<Item = &CuboidId> {
        self.sizes.keys()
    }

    /// Whether every materialized cuboid is in memory.
    pub fn is_complete(&self) -> bool {
        self.cuboids.len() == self.sizes.len()
    }

    pub fn cuboid(&self, id: &CuboidId) -> Option<&Cuboid> {
        self.cuboids.get(id)
    }

    pub fn total_cells(&self) -> usize {
        self.sizes.values().sum()
    }

    /// Member values of a cell of cuboid `id`.
    pub fn cell_values<'a>(&'a self, id: &CuboidId, cell: &CubeCell) -> Vec<&'a str> {
        id.0.iter()
            .enumerate()
            .filter_map(|(d, l)| l.map(|l| (d, l)))
            .zip(cell.coords.iter())
            .map(|((d, l), &c)| self.dims[d].dictionaries[l][c as usize].as_str())
            .collect()
    }

    /// Fails with `StaleCube` unless this cube was built from `wh`'s current
    /// checkpoint.
    pub fn check_fresh(&self, wh: &Warehouse) -> Result<()> {
        match wh.checkpoint_digest() {
            Some(d) if d == self.source_checkpoint && !wh.is_dirty() => Ok(()),
            other => Err(CubeError::StaleCube {
                cube: self.source_checkpoint.clone(),
                warehouse: other.unwrap_or("<none>").to_string(),
            }),
        }
    }
}

/// Distinct level-value tuples of every base member, per fact dimension.
pub(crate) fn member_tuples(wh: &Warehouse) -> Vec<Vec<Vec<String>>> {
    wh.joined_dimensions().dims
}

/// Materializes the policy-selected cuboids over the warehouse's current
/// checkpoint using `workers` threads (0 = rayon default).
pub fn build_cube(wh: &Warehouse, policy: &MaterializationPolicy, workers: usize) -> Result<Cube> {
    let checkpoint = match wh.checkpoint_digest() {
        Some(d) if !wh.is_dirty() => d.to_string(),
        _ => return Err(CubeError::StaleWarehouse),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CubeError::InvalidPolicy(format!("thread pool: {e}")))?;
    pool.install(|| build_inner(wh, policy, checkpoint))
}

fn build_inner(wh: &Warehouse, policy: &MaterializationPolicy, checkpoint: String) -> Result<Cube> {
    let layout = wh.layout().clone();
    let selected = policy.select(&layout)?;
    let joined = member_tuples(wh);

    let dims: Vec<DimensionIndex> = layout
        .dimensions
        .iter()
        .zip(&joined)
        .map(|(d, members)| DimensionIndex::new(d, members.clone()))
        .collect::<Result<_>>()?;

    // Finest-level code of each base member, per dimension.
    let member_codes: Vec<Vec<u32>> = dims
        .iter()
        .zip(&joined)
        .map(|(idx, members)| {
            if idx.level_names.is_empty() {
                Vec::new()
            } else {
                members.iter().map(|m| idx.code(0, &m[0]).expect("in dictionary")).collect()
            }
        })
        .collect();

    let n_measures = wh.schema().fact.measures.len();
    let base_id = CuboidId::base(&layout);
    let mut base: HashMap<Box<[u32]>, Box<[Aggregate]>> = HashMap::new();
    for row in wh.facts() {
        let coords: Box<[u32]> = base_id
            .0
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_some())
            .map(|(d, _)| member_codes[d][row.keys[d] as usize])
            .collect();
        match base.get_mut(&coords) {
            Some(aggs) => {
                for (a, &v) in aggs.iter_mut().zip(&row.measures) {
                    a.merge(&Aggregate::of(v));
                }
            }
            None => {
                let aggs: Box<[Aggregate]> = row.measures.iter().map(|&v| Aggregate::of(v)).collect();
                debug_assert_eq!(aggs.len(), n_measures);
                base.insert(coords, aggs);
            }
        }
    }

    let mut cuboids: BTreeMap<CuboidId, Cuboid> = BTreeMap::new();
    cuboids.insert(base_id.clone(), sorted_cuboid(base));
    let mut sizes: BTreeMap<CuboidId, usize> = BTreeMap::new();
    sizes.insert(base_id.clone(), cuboids[&base_id].cells.len());

    // Waves by total rank: every proper parent sits in an earlier wave.
    let wave_of = |id: &CuboidId| -> usize { id.0.iter().zip(&dims).map(|(l, d)| d.rank(*l)).sum() };
    let mut waves: BTreeMap<usize, Vec<CuboidId>> = BTreeMap::new();
    for id in selected.iter().filter(|id| **id != base_id) {
        waves.entry(wave_of(id)).or_default().push(id.clone());
    }
    for (_, ids) in waves {
        let built: Vec<(CuboidId, Cuboid)> = ids
            .par_iter()
            .map(|id| {
                let parent = choose_parent(&dims, &sizes, id, None);
                (id.clone(), derive_cuboid(&dims, parent, &cuboids[parent], id))
            })
            .collect();
        sizes.extend(built.iter().map(|(id, c)| (id.clone(), c.cells.len())));
        cuboids.extend(built);
    }

    Ok(Cube {
        schema_digest: wh.schema().digest(),
        source_checkpoint: checkpoint,
        policy: policy.clone(),
        layout,
        measures: wh.schema().fact.measures.iter().map(|m| m.name.clone()).collect(),
        dims,
        sizes,
        cuboids,
    })
}

fn sorted_cuboid(map: HashMap<Box<[u32]>, Box<[Aggregate]>>) -> Cuboid {
    let mut cells: Vec<CubeCell> = map.into_iter().map(|(coords, aggregates)| CubeCell { coords, aggregates }).collect();
    cells.sort_unstable_by(|a, b| a.coords.cmp(&b.coords));
    Cuboid { cells }
}

/// Smallest materialized cuboid from which `target` can be derived. With
/// `required`, each dimension's chosen level must also derive the listed
/// levels. The base cuboid always qualifies.
pub(crate) fn choose_parent<'a>(
    dims: &[DimensionIndex],
    sizes: &'a BTreeMap<CuboidId, usize>,
    target: &CuboidId,
    required: Option<&[Vec<usize>]>,
) -> &'a CuboidId {
    let mut best: Option<(&CuboidId, usize)> = None;
    for (id, &cells) in sizes {
        if id == target && required.is_none() {
            continue;
        }
        let ok = match required {
            None => id.0.iter().zip(&target.0).zip(dims).all(|((f, t), d)| d.parent_ok(*f, *t)),
            Some(req) => id.0.iter().zip(req).zip(dims).all(|((f, need), d)| match f {
                Some(f) => need.iter().all(|&n| d.can_derive(*f, n)),
                None => need.is_empty(),
            }),
        };
        if ok && best.is_none_or(|(_, n)| cells < n) {
            best = Some((id, cells));
        }
    }
    best.expect("base cuboid derives every cuboid").0
}

fn derive_cuboid(dims: &[DimensionIndex], parent_id: &CuboidId, parent: &Cuboid, target: &CuboidId) -> Cuboid {
    // (position in parent coords, dimension, from level, to level) per target coord.
    let mut plan = Vec::new();
    let mut pos = 0;
    for (d, (from, to)) in parent_id.0.iter().zip(&target.0).enumerate() {
        if let Some(from) = from {
            if let Some(to) = to {
                plan.push((pos, d, *from, *to));
            }
            pos += 1;
        }
    }
    let mut map: HashMap<Box<[u32]>, Box<[Aggregate]>> = HashMap::new();
    for cell in &parent.cells {
        let coords: Box<[u32]> =
            plan.iter().map(|&(p, d, from, to)| dims[d].roll(from, to, cell.coords[p])).collect();
        match map.get_mut(&coords) {
            Some(aggs) => merge_all(aggs, &cell.aggregates),
            None => {
                map.insert(coords, cell.aggregates.clone());
            }
        }
    }
    sorted_cuboid(map)
}
