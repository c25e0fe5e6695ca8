//! Roll-up, drill-down, slice and dice as pure rewrites of a query spec.

use serde::{Deserialize, Serialize};

use super::{CubeError, FilterSpec, GroupBySpec, QuerySpec, Result};
use crate::model::SchemaLayout;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum NavAction {
    RollUp { dimension: String, hierarchy: Option<String> },
    DrillDown { dimension: String, hierarchy: Option<String> },
    Slice { dimension: String, level: String, member: String },
    Dice { filters: Vec<FilterSpec> },
}

/// Candidate hierarchies (as level-index ladders) for moving `dimension`
/// away from `level` (`None` = All).
fn ladders<'a>(
    layout: &'a SchemaLayout,
    dimension: &str,
    hierarchy: Option<&str>,
    level: Option<usize>,
) -> Result<Vec<(&'a str, &'a [usize])>> {
    let d = layout.dimension_index(dimension).ok_or_else(|| CubeError::UnknownDimension(dimension.into()))?;
    let dim = &layout.dimensions[d];
    let all: Vec<(&str, &[usize])> = dim.hierarchies.iter().map(|(n, ls)| (n.as_str(), ls.as_slice())).collect();
    match hierarchy {
        Some(h) => {
            let found = all.into_iter().find(|(n, _)| *n == h).ok_or_else(|| CubeError::UnknownHierarchy {
                dimension: dimension.into(),
                hierarchy: h.into(),
            })?;
            if let Some(l) = level {
                if !found.1.contains(&l) {
                    return Err(CubeError::UnknownLevel {
                        dimension: dimension.into(),
                        level: dim.levels[l].name.clone(),
                    });
                }
            }
            Ok(vec![found])
        }
        None => Ok(all.into_iter().filter(|(_, ls)| level.is_none_or(|l| ls.contains(&l))).collect()),
    }
}

/// Pick the single next level, or fail as ambiguous when the candidate
/// hierarchies disagree.
fn unique_step(dimension: &str, steps: Vec<Option<usize>>) -> Result<Option<usize>> {
    let mut it = steps.into_iter();
    let first = it.next().ok_or_else(|| CubeError::UnknownDimension(dimension.into()))?;
    if it.any(|s| s != first) {
        return Err(CubeError::AmbiguousHierarchy(dimension.into()));
    }
    Ok(first)
}

/// Applies one navigation step, returning a new spec.
pub fn navigate(layout: &SchemaLayout, spec: &QuerySpec, action: &NavAction) -> Result<QuerySpec> {
    let mut out = spec.clone();
    match action {
        NavAction::RollUp { dimension, hierarchy } => {
            let pos = spec
                .group_by
                .iter()
                .position(|g| &g.dimension == dimension)
                .ok_or_else(|| CubeError::AtApex(dimension.clone()))?;
            let entry = &spec.group_by[pos];
            let d = layout.dimension_index(dimension).ok_or_else(|| CubeError::UnknownDimension(dimension.clone()))?;
            let dim = &layout.dimensions[d];
            let cur = dim.level_index(&entry.level).ok_or_else(|| CubeError::UnknownLevel {
                dimension: dimension.clone(),
                level: entry.level.clone(),
            })?;
            let h = hierarchy.as_deref().or(entry.hierarchy.as_deref());
            let steps = ladders(layout, dimension, h, Some(cur))?
                .into_iter()
                .map(|(_, ls)| {
                    let i = ls.iter().position(|&l| l == cur).expect("filtered");
                    ls.get(i + 1).copied()
                })
                .collect();
            match unique_step(dimension, steps)? {
                Some(next) => {
                    out.group_by[pos].level = dim.levels[next].name.clone();
                    if hierarchy.is_some() {
                        out.group_by[pos].hierarchy = hierarchy.clone();
                    }
                }
                None => {
                    out.group_by.remove(pos);
                }
            }
        }
        NavAction::DrillDown { dimension, hierarchy } => {
            let d = layout.dimension_index(dimension).ok_or_else(|| CubeError::UnknownDimension(dimension.clone()))?;
            let dim = &layout.dimensions[d];
            match spec.group_by.iter().position(|g| &g.dimension == dimension) {
                Some(pos) => {
                    let entry = &spec.group_by[pos];
                    let cur = dim.level_index(&entry.level).ok_or_else(|| CubeError::UnknownLevel {
                        dimension: dimension.clone(),
                        level: entry.level.clone(),
                    })?;
                    let h = hierarchy.as_deref().or(entry.hierarchy.as_deref());
                    let steps = ladders(layout, dimension, h, Some(cur))?
                        .into_iter()
                        .map(|(_, ls)| {
                            let i = ls.iter().position(|&l| l == cur).expect("filtered");
                            i.checked_sub(1).map(|j| ls[j])
                        })
                        .collect();
                    match unique_step(dimension, steps)? {
                        Some(prev) => {
                            out.group_by[pos].level = dim.levels[prev].name.clone();
                            if hierarchy.is_some() {
                                out.group_by[pos].hierarchy = hierarchy.clone();
                            }
                        }
                        None => return Err(CubeError::AtBase(dimension.clone())),
                    }
                }
                None => {
                    let steps = ladders(layout, dimension, hierarchy.as_deref(), None)?
                        .into_iter()
                        .map(|(_, ls)| ls.last().copied())
                        .collect();
                    let coarsest = unique_step(dimension, steps)?.ok_or_else(|| CubeError::AtBase(dimension.clone()))?;
                    let entry = GroupBySpec {
                        dimension: dimension.clone(),
                        hierarchy: hierarchy.clone(),
                        level: dim.levels[coarsest].name.clone(),
                    };
                    // Keep group-by entries in schema dimension order.
                    let at = out
                        .group_by
                        .iter()
                        .position(|g| layout.dimension_index(&g.dimension).is_some_and(|gd| gd > d))
                        .unwrap_or(out.group_by.len());
                    out.group_by.insert(at, entry);
                }
            }
        }
        NavAction::Slice { dimension, level, member } => {
            check_level(layout, dimension, level)?;
            out.filters.push(FilterSpec {
                dimension: dimension.clone(),
                hierarchy: None,
                level: level.clone(),
                values: vec![member.clone()],
            });
        }
        NavAction::Dice { filters } => {
            for f in filters {
                check_level(layout, &f.dimension, &f.level)?;
            }
            out.filters.extend(filters.iter().cloned());
        }
    }
    Ok(out)
}

fn check_level(layout: &SchemaLayout, dimension: &str, level: &str) -> Result<()> {
    let d = layout.dimension_index(dimension).ok_or_else(|| CubeError::UnknownDimension(dimension.into()))?;
    layout.dimensions[d]
        .level_index(level)
        .map(|_| ())
        .ok_or_else(|| CubeError::UnknownLevel { dimension: dimension.into(), level: level.into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_tcm_schema;

    fn layout() -> SchemaLayout {
        SchemaLayout::new(&builtin_tcm_schema()).unwrap()
    }

    fn roll(d: &str) -> NavAction {
        NavAction::RollUp { dimension: d.into(), hierarchy: None }
    }

    fn drill(d: &str) -> NavAction {
        NavAction::DrillDown { dimension: d.into(), hierarchy: None }
    }

    #[test]
    fn date_steps() {
        let l = layout();
        let month = QuerySpec::default().group("Date", "month");
        assert_eq!(navigate(&l, &month, &roll("Date")).unwrap(), QuerySpec::default().group("Date", "quarter"));
        let year = QuerySpec::default().group("Date", "year");
        assert_eq!(navigate(&l, &year, &drill("Date")).unwrap(), QuerySpec::default().group("Date", "quarter"));
        assert_eq!(navigate(&l, &year, &roll("Date")).unwrap(), QuerySpec::default());
        let day = QuerySpec::default().group("Date", "day");
        assert!(matches!(navigate(&l, &day, &drill("Date")), Err(CubeError::AtBase(_))));
    }

    #[test]
    fn roll_up_of_ungrouped_dimension_is_at_apex() {
        let spec = QuerySpec::default().group("Date", "year");
        assert!(matches!(navigate(&layout(), &spec, &roll("Source")), Err(CubeError::AtApex(_))));
    }

    #[test]
    fn source_needs_a_hierarchy_when_paths_diverge() {
        let l = layout();
        let src = QuerySpec::default().group("Source", "source");
        assert!(matches!(navigate(&l, &src, &roll("Source")), Err(CubeError::AmbiguousHierarchy(_))));
        let geo = NavAction::RollUp { dimension: "Source".into(), hierarchy: Some("by_geography".into()) };
        let mut country = QuerySpec::default().group("Source", "country");
        country.group_by[0].hierarchy = Some("by_geography".into());
        assert_eq!(navigate(&l, &src, &geo).unwrap(), country);
        assert!(matches!(navigate(&l, &QuerySpec::default(), &drill("Source")), Err(CubeError::AmbiguousHierarchy(_))));
        // country belongs to one hierarchy only
        let country = QuerySpec::default().group("Source", "country");
        assert_eq!(navigate(&l, &country, &drill("Source")).unwrap(), src);
    }

    #[test]
    fn drill_from_all_inserts_in_schema_order() {
        let l = layout();
        let spec = QuerySpec::default().group("Date", "year").group("Herb", "herb");
        let out = navigate(&l, &spec, &drill("Formula")).unwrap();
        let dims: Vec<&str> = out.group_by.iter().map(|g| g.dimension.as_str()).collect();
        assert_eq!(dims, vec!["Date", "Formula", "Herb"]);
        assert_eq!(out.group_by[1].level, "formula_type");
    }

    #[test]
    fn slice_and_dice_add_filters_without_touching_input() {
        let l = layout();
        let spec = QuerySpec::default().group("Herb", "herb");
        let sliced = navigate(
            &l,
            &spec,
            &NavAction::Slice { dimension: "Date".into(), level: "year".into(), member: "2010".into() },
        )
        .unwrap();
        assert_eq!(sliced.filters.len(), 1);
        assert!(spec.filters.is_empty());
        let diced = navigate(
            &l,
            &sliced,
            &NavAction::Dice {
                filters: vec![FilterSpec {
                    dimension: "Source".into(),
                    hierarchy: None,
                    level: "country".into(),
                    values: vec!["China".into(), "Japan".into()],
                }],
            },
        )
        .unwrap();
        assert_eq!(diced.filters.len(), 2);
        assert_eq!(diced.filters[1].values.len(), 2);
    }
}
