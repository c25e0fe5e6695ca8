use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use tcmdw_core::cube::{self, enumerate_lattice, navigate, AggKind, CuboidId, MaterializationPolicy, NavAction, QuerySpec, Value};
use tcmdw_core::etl::{self, Rule, StagedBatch, Target};
use tcmdw_core::model::{builtin_tcm_schema, parse_schema, schema_to_string, validate_schema, SchemaLayout};
use tcmdw_core::storage::{FactRow, Warehouse};

const CASES: u32 = 32;

fn attrs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// One generated fact: (year offset, month, day, formula, herb, source, quantity).
type RawFact = (u8, u8, u8, u8, u8, u8, i64);

fn raw_fact() -> impl Strategy<Value = RawFact> {
    (0u8..2, 1u8..=12, 1u8..=28, 0u8..4, 0u8..5, 0u8..4, 1i64..50_000)
}

/// A small in-memory warehouse with two branches on every snowflake.
fn warehouse_with(facts: &[RawFact], scale: i64) -> Warehouse {
    let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
    let formulas: Vec<u64> = (0..4)
        .map(|i| {
            let refs = attrs(&[("FormulaTypes", if i % 2 == 0 { "Type A" } else { "Type B" })]);
            wh.upsert_dimension_member("Formulas", &format!("F{i}"), &attrs(&[("indication", "any")]), &refs).unwrap()
        })
        .collect();
    let herbs: Vec<u64> = (0..5)
        .map(|i| {
            let refs = attrs(&[("HerbTypes", ["Warm", "Cool", "Tonic"][i % 3])]);
            wh.upsert_dimension_member("Herbs", &format!("H{i}"), &attrs(&[("latin_name", "Radix")]), &refs).unwrap()
        })
        .collect();
    let sources: Vec<u64> = (0..4)
        .map(|i| {
            let refs = attrs(&[
                ("SourceTypes", if i % 2 == 0 { "Clinic" } else { "Hospital" }),
                ("Countries", ["China", "Japan", "Korea"][i % 3]),
            ]);
            wh.upsert_dimension_member("Sources", &format!("S{i}"), &attrs(&[("city", "Town")]), &refs).unwrap()
        })
        .collect();
    let rows: Vec<FactRow> = facts
        .iter()
        .enumerate()
        .map(|(n, &(y, m, d, f, h, s, q))| {
            let (day, _) = wh.resolve_member("Dates", &format!("{}{m:02}{d:02}", 2009 + y as u32), false).unwrap();
            FactRow {
                keys: vec![day, formulas[f as usize], herbs[h as usize], sources[s as usize]],
                degenerate: vec![format!("P{n}")],
                measures: vec![q * scale],
            }
        })
        .collect();
    let out = wh.append_facts(rows).unwrap();
    assert_eq!(out.accepted, facts.len());
    wh.checkpoint().unwrap();
    wh
}

fn layout() -> SchemaLayout {
    SchemaLayout::new(&builtin_tcm_schema()).unwrap()
}

/// Additive columns (sum, count, min, max) of a cuboid answer, keyed by coordinates.
fn additive(rs: &cube::ResultSet, groups: usize) -> BTreeMap<Vec<String>, [i128; 4]> {
    rs.rows
        .iter()
        .map(|r| {
            let coords = r[..groups].iter().map(|v| v.to_string()).collect();
            let mut a = [0i128; 4];
            for (i, v) in r[groups..groups + 4].iter().enumerate() {
                a[i] = match v {
                    Value::Int(x) => *x,
                    other => panic!("non-integer additive value {other:?}"),
                };
            }
            (coords, a)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: CASES, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn stored_facts_only_reference_existing_members(
        facts in prop::collection::vec(raw_fact(), 1..40),
        bad in prop::collection::vec((0usize..40, 0usize..4, 50u64..500), 0..10),
    ) {
        let mut wh = warehouse_with(&facts, 1);
        let base = wh.facts().to_vec();
        let mut rows = Vec::new();
        let mut dangling = BTreeSet::new();
        for (i, &(pick, dim, key)) in bad.iter().enumerate() {
            let mut row = base[pick % base.len()].clone();
            row.keys[dim] = key;
            row.degenerate = vec![format!("X{i}")];
            dangling.insert(i);
            rows.push(row);
        }
        let out = wh.append_facts(rows).unwrap();
        prop_assert_eq!(out.accepted, 0);
        prop_assert_eq!(out.outcomes.len(), dangling.len());
        let joined = wh.joined_dimensions();
        for f in wh.facts() {
            for (d, k) in f.keys.iter().enumerate() {
                let table = &wh.layout().dimensions[d].base_table;
                prop_assert!(wh.table(table).unwrap().get(*k).is_some());
                prop_assert!((*k as usize) < joined.dims[d].len());
            }
        }
    }

    #[test]
    fn surrogate_keys_are_dense(names in prop::collection::vec("[a-e]{1,2}", 1..60), infer in any::<bool>()) {
        let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        let mut distinct = BTreeSet::new();
        for n in &names {
            let k = if infer {
                wh.resolve_member("Herbs", n, true).unwrap().0
            } else {
                wh.upsert_dimension_member("Herbs", n, &attrs(&[("latin_name", "Radix")]), &BTreeMap::new()).unwrap()
            };
            prop_assert!(k >= 1);
            distinct.insert(n.clone());
        }
        for t in wh.tables() {
            let keys: Vec<u64> = t.rows().iter().map(|m| m.surrogate_key).collect();
            let expected: Vec<u64> = (0..keys.len() as u64).collect();
            prop_assert_eq!(keys, expected);
        }
        prop_assert_eq!(wh.table("Herbs").unwrap().rows().len(), distinct.len() + 1);
    }

    #[test]
    fn schema_text_round_trips(descriptions in prop::collection::vec(".{0,12}", 1..8), rename in "[A-Z][a-z]{2,8}") {
        let mut schema = builtin_tcm_schema();
        schema.name = rename;
        let mut i = 0;
        for d in &mut schema.dimensions {
            for t in &mut d.tables {
                for a in &mut t.attributes {
                    a.description = descriptions[i % descriptions.len()].clone();
                    i += 1;
                }
            }
        }
        let text = schema_to_string(&schema);
        let back = parse_schema(&text).unwrap();
        prop_assert_eq!(&back, &schema);
        prop_assert_eq!(schema_to_string(&back), text);
        prop_assert!(validate_schema(&back).valid());
    }

    #[test]
    fn transform_accounts_for_every_row(
        rows in prop::collection::vec(
            ("[0-9]{0,3}", "(2010-0[1-9]-1[0-9])|(20[0-9]{2}-1[3-9]-00)|x", "[A-C]?", "-?[0-9]{0,6}(\\.[0-9]{1,3})?"),
            0..40,
        ),
        min in 0i64..2000,
    ) {
        let fields: Vec<String> =
            ["prescription_id", "Date", "Formula", "Herb", "Source", "quantity"].iter().map(|s| s.to_string()).collect();
        let batch = StagedBatch {
            fields: fields.clone(),
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, (id, date, name, q))| {
                    let values = [format!("P{id}"), date.clone(), name.clone(), name.clone(), name.clone(), q.clone()];
                    (i + 1, fields.iter().cloned().zip(values).collect())
                })
                .collect(),
            rejects: vec![],
        };
        let rules = vec![
            Rule::DateParse { field: "Date".into(), pattern: "YYYY-MM-DD".into() },
            Rule::DomainCheck { field: "quantity".into(), min: Some(min), max: None },
        ];
        let schema = builtin_tcm_schema();
        let out = etl::transform(&batch, &rules, &Target::Fact, &schema);
        prop_assert_eq!(out.conformed.len() + out.rejects.len(), batch.len());
        let mut seen: Vec<usize> = out.conformed.iter().map(|(r, _)| *r).chain(out.rejects.iter().map(|r| r.row)).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (1..=batch.len()).collect::<Vec<_>>());

        let mut wh = Warehouse::in_memory(schema.clone()).unwrap();
        let report = etl::load(&mut wh, &out.conformed, "b", &Target::Fact, true).unwrap();
        prop_assert_eq!(report.rows_in, out.conformed.len() as u64);
        prop_assert_eq!(report.inserted + report.rejected + report.skipped_duplicate_batch, report.rows_in);
        prop_assert_eq!(wh.fact_count() as u64, report.inserted);
    }

    #[test]
    fn drill_down_then_roll_up_is_identity(
        picks in prop::collection::vec(0usize..8, 4),
        hier in prop::collection::vec(0usize..2, 4),
        which in 0usize..4,
    ) {
        let layout = layout();
        let mut spec = QuerySpec::default().measure("quantity", AggKind::Sum);
        let mut chosen_h = vec![None; layout.dimensions.len()];
        for (d, dim) in layout.dimensions.iter().enumerate() {
            let (hname, ladder) = &dim.hierarchies[hier[d] % dim.hierarchies.len()];
            let pick = picks[d] % (ladder.len() + 1);
            chosen_h[d] = Some(hname.clone());
            if pick < ladder.len() {
                spec.group_by.push(cube::GroupBySpec {
                    dimension: dim.name.clone(),
                    hierarchy: Some(hname.clone()),
                    level: dim.levels[ladder[pick]].name.clone(),
                });
            }
        }
        let dim = &layout.dimensions[which];
        let drill = NavAction::DrillDown { dimension: dim.name.clone(), hierarchy: chosen_h[which].clone() };
        let roll = NavAction::RollUp { dimension: dim.name.clone(), hierarchy: chosen_h[which].clone() };
        if let Ok(finer) = navigate(&layout, &spec, &drill) {
            prop_assert_eq!(navigate(&layout, &finer, &roll).unwrap(), spec.clone());
        }
        if let Ok(coarser) = navigate(&layout, &spec, &roll) {
            prop_assert_eq!(navigate(&layout, &coarser, &drill).unwrap(), spec);
        }
    }

    #[test]
    fn every_roll_up_step_folds_child_cells(facts in prop::collection::vec(raw_fact(), 1..60)) {
        let wh = warehouse_with(&facts, 1);
        let c = cube::build_cube(&wh, &MaterializationPolicy::full(), 1).unwrap();
        let layout = c.layout().clone();
        // level value of `coarse` for every value of `fine`, from the joined members
        let joined = wh.joined_dimensions();
        for child in enumerate_lattice(&layout) {
            for (d, dim) in layout.dimensions.iter().enumerate() {
                let Some(fine) = child.0[d] else { continue };
                let coarser: Vec<Option<usize>> = (0..dim.levels.len())
                    .filter(|&l| l != fine && dim.rolls_up_to(fine, l))
                    .map(Some)
                    .chain([None])
                    .collect();
                for coarse in coarser {
                    let mut parent = child.clone();
                    parent.0[d] = coarse;
                    let map: BTreeMap<&str, Option<&str>> = joined.dims[d]
                        .iter()
                        .map(|m| (m[fine].as_str(), coarse.map(|l| m[l].as_str())))
                        .collect();
                    let pos = child.0[..d].iter().filter(|l| l.is_some()).count();
                    let child_cells = additive(&c.cuboid_result_set(&child).unwrap(), child.non_all_levels());
                    let mut folded: BTreeMap<Vec<String>, [i128; 4]> = BTreeMap::new();
                    for (mut coords, a) in child_cells {
                        match map[coords[pos].as_str()] {
                            Some(v) => coords[pos] = v.to_string(),
                            None => { coords.remove(pos); }
                        }
                        let e = folded.entry(coords).or_insert([0, 0, i128::MAX, i128::MIN]);
                        e[0] += a[0];
                        e[1] += a[1];
                        e[2] = e[2].min(a[2]);
                        e[3] = e[3].max(a[3]);
                    }
                    let want = additive(&c.cuboid_result_set(&parent).unwrap(), parent.non_all_levels());
                    prop_assert_eq!(folded, want, "{} -> {}", child, parent);
                }
            }
        }
    }

    #[test]
    fn scaling_quantities_scales_sums_and_extremes(facts in prop::collection::vec(raw_fact(), 1..40), k in 1i64..1000) {
        let one = warehouse_with(&facts, 1);
        let many = warehouse_with(&facts, k);
        let policy = MaterializationPolicy::max_levels(2);
        let a = cube::build_cube(&one, &policy, 1).unwrap();
        let b = cube::build_cube(&many, &policy, 1).unwrap();
        for id in a.materialized().cloned().collect::<Vec<CuboidId>>() {
            let groups = id.non_all_levels();
            let x = additive(&a.cuboid_result_set(&id).unwrap(), groups);
            let y = additive(&b.cuboid_result_set(&id).unwrap(), groups);
            prop_assert_eq!(x.len(), y.len());
            for (coords, ax) in &x {
                let by = y[coords];
                let k = k as i128;
                prop_assert_eq!(by, [ax[0] * k, ax[1], ax[2] * k, ax[3] * k]);
            }
        }
    }
}
