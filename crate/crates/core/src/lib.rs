//! Embeddable dimensional warehouse engine for prescription analytics:
//! snowflake schemas, rule-driven ETL, pre-aggregated OLAP cubes, lineage
//! and reports.

pub mod cli;
pub mod cube;
pub mod datagen;
pub mod etl;
pub mod metadata;
pub mod model;
pub mod numeric;
pub mod report;
pub mod storage;
