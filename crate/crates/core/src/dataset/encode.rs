use std::collections::BTreeSet;

use chrono::{Datelike, Timelike};
use ndarray::Array2;

use super::table::{Cell, ColumnKind, RawTable};
use crate::error::{Error, Result};

pub const MISSING_CATEGORY: &str = "MISSING";

/// Encodes every feature column (all columns except region and target) into
/// a dense numeric matrix.
///
/// * numeric columns pass through, missing cells are median-imputed;
/// * categoricals with at most `cardinality_threshold` distinct values become
///   one-hot blocks named `column=value`, larger ones become label codes;
/// * timestamps expand to year, month, ISO week, day of month and hour.
///
/// Category levels are sorted so the encoding does not depend on row order.
pub fn encode_features(
    table: &RawTable,
    cardinality_threshold: usize,
) -> Result<(Array2<f64>, Vec<String>)> {
    let n = table.len();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();

    for (c, col) in table.columns().iter().enumerate() {
        if c == table.region_index() || c == table.target_index() {
            continue;
        }
        let cells = table.rows().iter().map(|r| &r[c]);
        if cells.clone().all(|v| *v == Cell::Missing) {
            return Err(Error::AllMissing(col.name.clone()));
        }
        match col.kind {
            ColumnKind::Numeric => {
                let mut present: Vec<f64> = cells
                    .clone()
                    .filter_map(|v| match v {
                        Cell::Num(x) => Some(*x),
                        _ => None,
                    })
                    .collect();
                present.sort_by(f64::total_cmp);
                let median = median_sorted(&present);
                blocks.push(
                    cells
                        .map(|v| match v {
                            Cell::Num(x) => *x,
                            _ => median,
                        })
                        .collect(),
                );
                names.push(col.name.clone());
            }
            ColumnKind::Categorical => {
                let values: Vec<&str> = cells
                    .map(|v| match v {
                        Cell::Cat(s) => s.as_str(),
                        _ => MISSING_CATEGORY,
                    })
                    .collect();
                let levels: BTreeSet<&str> = values.iter().copied().collect();
                let levels: Vec<&str> = levels.into_iter().collect();
                if levels.len() <= cardinality_threshold {
                    for level in &levels {
                        blocks.push(
                            values
                                .iter()
                                .map(|v| if v == level { 1.0 } else { 0.0 })
                                .collect(),
                        );
                        names.push(format!("{}={}", col.name, level));
                    }
                } else {
                    blocks.push(
                        values
                            .iter()
                            .map(|v| levels.binary_search(v).unwrap() as f64)
                            .collect(),
                    );
                    names.push(col.name.clone());
                }
            }
            ColumnKind::Timestamp => {
                let times: Vec<_> = cells
                    .map(|v| match v {
                        Cell::Time(t) => Some(*t),
                        _ => None,
                    })
                    .collect();
                let parts: [(&str, fn(&chrono::NaiveDateTime) -> f64); 5] = [
                    ("year", |t| t.year() as f64),
                    ("month", |t| t.month() as f64),
                    ("week", |t| t.iso_week().week() as f64),
                    ("day", |t| t.day() as f64),
                    ("hour", |t| t.hour() as f64),
                ];
                for (suffix, f) in parts {
                    let mut present: Vec<f64> = times.iter().flatten().map(f).collect();
                    present.sort_by(f64::total_cmp);
                    let median = median_sorted(&present);
                    blocks.push(times.iter().map(|t| t.as_ref().map_or(median, f)).collect());
                    names.push(format!("{}.{suffix}", col.name));
                }
            }
        }
    }

    let mut x = Array2::zeros((n, blocks.len()));
    for (j, block) in blocks.iter().enumerate() {
        for (i, v) in block.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    Ok((x, names))
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
